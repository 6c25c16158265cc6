#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "usdrl/config.hpp"
#include "usdrl/serialize.hpp"

using namespace usdrl;

namespace {

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("container round trip preserves f32 bits and header config") {
    io::Container<float> c;
    c.config = {{"hello", 1}, {"nested", {{"x", 2.5}}}};
    Rng rng(51);
    Mat<float> a(3, 4), b(1, 7);
    for (auto& v : a.vec()) v = static_cast<float>(rng.normal());
    for (auto& v : b.vec()) v = static_cast<float>(rng.normal());
    c.arrays.emplace_back("block/a", a);
    c.arrays.emplace_back("block/b", b);

    const auto path = temp_file("usdrl_container.bin");
    io::write_container(path, c);
    auto r = io::read_container<float>(path);
    CHECK(r.config == c.config);
    REQUIRE(r.find("block/a") != nullptr);
    REQUIRE(r.find("block/b") != nullptr);
    CHECK(r.find("block/a")->vec() == a.vec());
    CHECK(r.find("block/b")->vec() == b.vec());

    // f32 file read back as double promotes exactly
    auto rd = io::read_container<double>(path);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(rd.find("block/a")->vec()[i] == static_cast<double>(a.vec()[i]));
}

TEST_CASE("container rejects truncated files") {
    const auto path = temp_file("usdrl_container_trunc.bin");
    {
        io::Container<float> c;
        c.config = {{"k", 1}};
        Mat<float> a(4, 4, 1.0f);
        c.arrays.emplace_back("a", a);
        io::write_container(path, c);
    }
    const auto sz = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, sz - 8);
    CHECK_THROWS(io::read_container<float>(path));
}

TEST_CASE("TOML subset parser") {
    const auto path = temp_file("usdrl_cfg.toml");
    {
        std::ofstream f(path);
        f << "# top comment\n"
          << "[encoder]\n"
          << "t = 64           # trailing comment\n"
          << "alpha = 0.25\n"
          << "causal = true\n"
          << "\n"
          << "[train]\n"
          << "modalities = [\"joint\", \"bone\"]\n"
          << "checkpoint_path = \"ck.bin\"\n"
          << "[augment]\n"
          << "scale = [0.9, 1.1]\n";
    }
    auto vals = config::parse_toml(path);
    CHECK(vals.at("encoder.t").num == 64);
    CHECK(vals.at("encoder.alpha").num == 0.25);
    CHECK(vals.at("encoder.causal").boolean);
    CHECK(vals.at("train.modalities").strs == std::vector<std::string>{"joint", "bone"});
    CHECK(vals.at("train.checkpoint_path").str == "ck.bin");
    CHECK(vals.at("augment.scale").nums == std::vector<double>{0.9, 1.1});

    config::RunConfig cfg;
    config::apply_values(cfg, vals);
    CHECK(cfg.train.encoder.t == 64);
    CHECK(cfg.train.encoder.alpha == 0.25);
    CHECK(cfg.train.encoder.causal);
    CHECK(cfg.train.modalities.size() == 2);
    CHECK(cfg.train.aug.scale[0] == 0.9);
    CHECK(cfg.provided.count("encoder.t") == 1);
    CHECK(cfg.provided.count("encoder.v") == 0);
}

TEST_CASE("TOML parser error paths") {
    const auto path = temp_file("usdrl_cfg_bad.toml");
    {
        std::ofstream f(path);
        f << "[encoder\n";
    }
    CHECK_THROWS_WITH_AS(config::parse_toml(path), doctest::Contains(":1"), std::runtime_error);
    {
        std::ofstream f(path);
        f << "[encoder]\n"
          << "t 64\n";
    }
    CHECK_THROWS_WITH_AS(config::parse_toml(path), doctest::Contains("key = value"),
                         std::runtime_error);
}

TEST_CASE("unknown config keys list the valid schema") {
    config::RunConfig cfg;
    std::map<std::string, config::TomlValue> vals;
    config::TomlValue v;
    v.kind = config::TomlValue::Kind::Number;
    v.num = 3;
    vals["encoder.bogus"] = v;
    CHECK_THROWS_WITH_AS(config::apply_values(cfg, vals), doctest::Contains("encoder.t"),
                         std::runtime_error);
}

TEST_CASE("CLI override values adopt schema typing") {
    auto num = config::value_from_cli("64");
    CHECK(num.kind == config::TomlValue::Kind::Number);
    CHECK(num.num == 64);
    auto b = config::value_from_cli("true");
    CHECK(b.kind == config::TomlValue::Kind::Bool);
    auto pair = config::value_from_cli("-15,15");
    CHECK(pair.kind == config::TomlValue::Kind::NumberList);
    CHECK(pair.nums == std::vector<double>{-15, 15});
    auto strs = config::value_from_cli("joint,bone");
    CHECK(strs.kind == config::TomlValue::Kind::StringList);
    auto s = config::value_from_cli("checkpoint.bin");
    CHECK(s.kind == config::TomlValue::Kind::String);
}

TEST_CASE("config digest is stable under re-serialization and sensitive to changes") {
    config::RunConfig a;
    a.data_manifest = "m.json";
    config::RunConfig b = a;
    CHECK(config::config_digest(a) == config::config_digest(b));

    // round trip through JSON must not change the digest
    auto j = config::run_config_to_json(a);
    config::RunConfig c = a;
    c.train = pretrain::config_from_json(j);
    CHECK(config::config_digest(c) == config::config_digest(a));

    b.train.encoder.gap = 5;
    CHECK(config::config_digest(b) != config::config_digest(a));
    config::RunConfig d = a;
    d.train.seed = 99;
    CHECK(config::config_digest(d) != config::config_digest(a));
}

TEST_CASE("pretrain config JSON round trip") {
    pretrain::PretrainConfig cfg;
    cfg.encoder.causal = true;
    cfg.encoder.gap = 3;
    cfg.modalities = {"joint"};
    cfg.pairing = pretrain::Pairing::AugmentOnly;
    cfg.aug.rot_z_deg[0] = -12;
    cfg.aug.rot_z_deg[1] = 12;
    auto j = pretrain::config_to_json(cfg);
    auto back = pretrain::config_from_json(j);
    CHECK(pretrain::config_to_json(back) == j);
    CHECK(back.encoder.causal);
    CHECK(back.pairing == pretrain::Pairing::AugmentOnly);
    CHECK(back.aug.rot_z_deg[0] == -12);
}
