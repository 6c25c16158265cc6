#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "usdrl/pretrain.hpp"

namespace usdrl::config {

// ---------------------------------------------------------------------------
// a small TOML subset: [sections], key = value with strings, numbers, bools
// and flat arrays; comments with '#'

struct TomlValue {
    enum class Kind { Number, Bool, String, NumberList, StringList } kind = Kind::String;
    double num = 0;
    bool boolean = false;
    std::string str;
    std::vector<double> nums;
    std::vector<std::string> strs;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline TomlValue parse_scalar(const std::string& raw, const std::string& where) {
    TomlValue v;
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
        v.kind = TomlValue::Kind::String;
        v.str = raw.substr(1, raw.size() - 2);
        return v;
    }
    if (raw == "true" || raw == "false") {
        v.kind = TomlValue::Kind::Bool;
        v.boolean = raw == "true";
        return v;
    }
    try {
        std::size_t used = 0;
        v.num = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        v.kind = TomlValue::Kind::Number;
        return v;
    } catch (...) {
        throw std::runtime_error(where + ": cannot parse value '" + raw + "'");
    }
}

}  // namespace detail

/// Parses a config file into flattened "section.key" -> value entries.
inline std::map<std::string, TomlValue> parse_toml(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::map<std::string, TomlValue> out;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto where = path + ":" + std::to_string(line_no);
        // strip comments outside strings
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line = line.substr(0, i);
                break;
            }
        }
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::runtime_error(where + ": malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error(where + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string raw = detail::trim(line.substr(eq + 1));
        if (key.empty() || raw.empty()) throw std::runtime_error(where + ": empty key or value");
        const std::string full = section.empty() ? key : section + "." + key;

        if (raw.front() == '[') {
            if (raw.back() != ']') throw std::runtime_error(where + ": malformed array");
            TomlValue v;
            std::string body = raw.substr(1, raw.size() - 2);
            std::vector<std::string> parts;
            std::string cur;
            bool str_ctx = false;
            for (char ch : body) {
                if (ch == '"') str_ctx = !str_ctx;
                if (ch == ',' && !str_ctx) {
                    parts.push_back(detail::trim(cur));
                    cur.clear();
                } else {
                    cur += ch;
                }
            }
            if (!detail::trim(cur).empty()) parts.push_back(detail::trim(cur));
            bool strings = !parts.empty() && parts[0].size() && parts[0][0] == '"';
            v.kind = strings ? TomlValue::Kind::StringList : TomlValue::Kind::NumberList;
            for (const auto& p : parts) {
                TomlValue sv = detail::parse_scalar(p, where);
                if (strings)
                    v.strs.push_back(sv.str);
                else
                    v.nums.push_back(sv.num);
            }
            out[full] = std::move(v);
        } else {
            out[full] = detail::parse_scalar(raw, where);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// config schema: single source of truth for file keys, CLI overrides and help

struct RunConfig {
    pretrain::PretrainConfig train;
    std::string data_manifest;
    std::string train_split = "train";
    std::string test_split = "test";
    std::set<std::string> provided;  // keys explicitly set via file or CLI
};

struct SchemaEntry {
    std::string key;
    std::string doc;
    std::function<void(RunConfig&, const TomlValue&)> apply;
    std::function<std::string(const RunConfig&)> show;
};

namespace detail {

inline double need_num(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::Number)
        throw std::runtime_error("config key '" + key + "' expects a number");
    return v.num;
}
inline bool need_bool(const TomlValue& v, const std::string& key) {
    if (v.kind == TomlValue::Kind::Bool) return v.boolean;
    if (v.kind == TomlValue::Kind::Number) return v.num != 0;
    if (v.kind == TomlValue::Kind::String && (v.str == "true" || v.str == "false"))
        return v.str == "true";
    throw std::runtime_error("config key '" + key + "' expects a boolean");
}
inline std::string need_str(const TomlValue& v, const std::string& key) {
    if (v.kind != TomlValue::Kind::String)
        throw std::runtime_error("config key '" + key + "' expects a string");
    return v.str;
}

}  // namespace detail

inline const std::vector<SchemaEntry>& schema() {
    static const std::vector<SchemaEntry> entries = [] {
        std::vector<SchemaEntry> s;
        auto num = [&s](const std::string& key, const std::string& doc, auto member) {
            s.push_back({key, doc,
                         [key, member](RunConfig& c, const TomlValue& v) {
                             using T = std::decay_t<decltype(c.*member)>;
                             (c.*member) = static_cast<T>(detail::need_num(v, key));
                         },
                         [member](const RunConfig& c) {
                             std::ostringstream os;
                             os << (c.*member);
                             return os.str();
                         }});
        };
        (void)num;
        auto enc = [&s](const std::string& key, const std::string& doc, auto member) {
            s.push_back({key, doc,
                         [key, member](RunConfig& c, const TomlValue& v) {
                             using T = std::decay_t<decltype(c.train.encoder.*member)>;
                             (c.train.encoder.*member) =
                                 static_cast<T>(detail::need_num(v, key));
                         },
                         [member](const RunConfig& c) {
                             std::ostringstream os;
                             os << (c.train.encoder.*member);
                             return os.str();
                         }});
        };
        auto lossw = [&s](const std::string& key, const std::string& doc, auto member) {
            s.push_back({key, doc,
                         [key, member](RunConfig& c, const TomlValue& v) {
                             (c.train.loss.*member) = detail::need_num(v, key);
                         },
                         [member](const RunConfig& c) {
                             std::ostringstream os;
                             os << (c.train.loss.*member);
                             return os.str();
                         }});
        };
        auto trainf = [&s](const std::string& key, const std::string& doc, auto member) {
            s.push_back({key, doc,
                         [key, member](RunConfig& c, const TomlValue& v) {
                             using T = std::decay_t<decltype(c.train.*member)>;
                             (c.train.*member) = static_cast<T>(detail::need_num(v, key));
                         },
                         [member](const RunConfig& c) {
                             std::ostringstream os;
                             os << (c.train.*member);
                             return os.str();
                         }});
        };
        auto aug_range = [&s](const std::string& key, const std::string& doc, auto member) {
            s.push_back({key, doc,
                         [key, member](RunConfig& c, const TomlValue& v) {
                             if (v.kind != TomlValue::Kind::NumberList || v.nums.size() != 2)
                                 throw std::runtime_error("config key '" + key +
                                                          "' expects [lo, hi]");
                             (c.train.aug.*member)[0] = v.nums[0];
                             (c.train.aug.*member)[1] = v.nums[1];
                         },
                         [member](const RunConfig& c) {
                             std::ostringstream os;
                             os << "[" << (c.train.aug.*member)[0] << ", "
                                << (c.train.aug.*member)[1] << "]";
                             return os.str();
                         }});
        };

        enc("encoder.c_in", "input coordinate dims (2 or 3); 0 keeps manifest value",
            &dste::EncoderConfig::c_in);
        enc("encoder.t", "model input length in frames", &dste::EncoderConfig::t);
        enc("encoder.v", "joint count; 0 keeps manifest value", &dste::EncoderConfig::v);
        enc("encoder.m", "person slots; 0 keeps manifest value", &dste::EncoderConfig::m);
        enc("encoder.c_e", "embedding channels", &dste::EncoderConfig::c_e);
        enc("encoder.c_r", "representation channels", &dste::EncoderConfig::c_r);
        enc("encoder.layers", "encoder layers per stream", &dste::EncoderConfig::layers);
        enc("encoder.heads", "attention heads", &dste::EncoderConfig::heads);
        enc("encoder.gap", "dense-shift gap", &dste::EncoderConfig::gap);
        enc("encoder.alpha", "CA weight in the CA/DSA sum (beta = 1 - alpha)",
            &dste::EncoderConfig::alpha);
        enc("encoder.conv_kernel", "depthwise conv kernel size (odd)",
            &dste::EncoderConfig::conv_kernel);
        s.push_back({"encoder.causal", "restrict the temporal stream to past frames",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.encoder.causal = detail::need_bool(v, "encoder.causal");
                     },
                     [](const RunConfig& c) {
                         return c.train.encoder.causal ? std::string("true") : std::string("false");
                     }});

        lossw("loss.tau", "spatial/temporal domain weight", &mgfd::LossWeights::tau);
        lossw("loss.kappa", "similarity weight", &mgfd::LossWeights::kappa);
        lossw("loss.eta", "cosine invariance weight", &mgfd::LossWeights::eta);
        lossw("loss.gamma", "variance floor", &mgfd::LossWeights::gamma);
        lossw("loss.epsilon", "variance stabilizer", &mgfd::LossWeights::epsilon);
        lossw("loss.mu", "variance term weight", &mgfd::LossWeights::mu);
        lossw("loss.lambda", "cross-correlation weight", &mgfd::LossWeights::lambda);
        lossw("loss.autocov", "auto-covariance term weight", &mgfd::LossWeights::autocov);
        trainf("loss.c_p", "projector output width", &pretrain::PretrainConfig::c_p);

        s.push_back({"train.modalities", "subset of [\"joint\", \"bone\", \"motion\"]",
                     [](RunConfig& c, const TomlValue& v) {
                         if (v.kind != TomlValue::Kind::StringList)
                             throw std::runtime_error(
                                 "config key 'train.modalities' expects a string list");
                         c.train.modalities = v.strs;
                     },
                     [](const RunConfig& c) {
                         std::string out = "[";
                         for (std::size_t i = 0; i < c.train.modalities.size(); ++i)
                             out += (i ? ", " : "") + c.train.modalities[i];
                         return out + "]";
                     }});
        s.push_back({"train.pairing", "positive-pair strategy: augment-only | multi-view",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.pairing =
                             pretrain::pairing_from_name(detail::need_str(v, "train.pairing"));
                     },
                     [](const RunConfig& c) { return pretrain::pairing_name(c.train.pairing); }});
        trainf("train.copies", "positive copies per sample (K)",
               &pretrain::PretrainConfig::copies);
        trainf("train.batch_size", "samples per step", &pretrain::PretrainConfig::batch_size);
        trainf("train.epochs", "training epochs", &pretrain::PretrainConfig::epochs);
        trainf("train.base_lr", "initial learning rate", &pretrain::PretrainConfig::base_lr);
        trainf("train.decay_epoch", "epoch at which lr drops to base/10",
               &pretrain::PretrainConfig::decay_epoch);
        trainf("train.weight_decay", "Adam weight decay", &pretrain::PretrainConfig::weight_decay);
        trainf("train.seed", "master seed", &pretrain::PretrainConfig::seed);
        trainf("train.checkpoint_interval", "epochs between snapshots (0 = end only)",
               &pretrain::PretrainConfig::checkpoint_interval);
        s.push_back({"train.checkpoint_path", "checkpoint output path",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.checkpoint_path = detail::need_str(v, "train.checkpoint_path");
                     },
                     [](const RunConfig& c) { return c.train.checkpoint_path; }});
        s.push_back({"train.log_path", "loss log (JSONL) output path",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.log_path = detail::need_str(v, "train.log_path");
                     },
                     [](const RunConfig& c) { return c.train.log_path; }});

        s.push_back({"data.manifest", "dataset manifest path",
                     [](RunConfig& c, const TomlValue& v) {
                         c.data_manifest = detail::need_str(v, "data.manifest");
                     },
                     [](const RunConfig& c) { return c.data_manifest; }});
        s.push_back({"data.train_split", "train split name",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train_split = detail::need_str(v, "data.train_split");
                     },
                     [](const RunConfig& c) { return c.train_split; }});
        s.push_back({"data.test_split", "test split name",
                     [](RunConfig& c, const TomlValue& v) {
                         c.test_split = detail::need_str(v, "data.test_split");
                     },
                     [](const RunConfig& c) { return c.test_split; }});

        aug_range("augment.rot_x_deg", "rotation range about x, degrees",
                  &skelio::AugSpec::rot_x_deg);
        aug_range("augment.rot_y_deg", "rotation range about y, degrees",
                  &skelio::AugSpec::rot_y_deg);
        aug_range("augment.rot_z_deg", "rotation range about z, degrees",
                  &skelio::AugSpec::rot_z_deg);
        aug_range("augment.shear", "shear coefficient range", &skelio::AugSpec::shear);
        aug_range("augment.scale", "uniform scale range", &skelio::AugSpec::scale);
        aug_range("augment.crop_ratio", "temporal crop ratio range",
                  &skelio::AugSpec::crop_ratio);
        s.push_back({"augment.jitter_std", "joint jitter stddev (meters)",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.aug.jitter_std = detail::need_num(v, "augment.jitter_std");
                     },
                     [](const RunConfig& c) {
                         std::ostringstream os;
                         os << c.train.aug.jitter_std;
                         return os.str();
                     }});
        s.push_back({"augment.flip_prob", "left/right flip probability",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.aug.flip_prob = detail::need_num(v, "augment.flip_prob");
                     },
                     [](const RunConfig& c) {
                         std::ostringstream os;
                         os << c.train.aug.flip_prob;
                         return os.str();
                     }});
        s.push_back({"augment.seed", "augmentation stream seed",
                     [](RunConfig& c, const TomlValue& v) {
                         c.train.aug.seed =
                             static_cast<std::uint64_t>(detail::need_num(v, "augment.seed"));
                     },
                     [](const RunConfig& c) { return std::to_string(c.train.aug.seed); }});
        return s;
    }();
    return entries;
}

inline const SchemaEntry* find_entry(const std::string& key) {
    for (const auto& e : schema())
        if (e.key == key) return &e;
    return nullptr;
}

inline std::string known_keys_message() {
    std::string msg = "valid config keys:";
    for (const auto& e : schema()) msg += "\n  " + e.key;
    return msg;
}

inline void apply_values(RunConfig& cfg, const std::map<std::string, TomlValue>& values) {
    for (const auto& [key, value] : values) {
        const SchemaEntry* e = find_entry(key);
        if (!e)
            throw std::runtime_error("unknown config key '" + key + "'\n" +
                                     known_keys_message());
        e->apply(cfg, value);
        cfg.provided.insert(key);
    }
}

inline RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    apply_values(cfg, parse_toml(path));
    return cfg;
}

/// Parses one CLI override value string through the same schema typing rules.
inline TomlValue value_from_cli(const std::string& raw) {
    if (raw.find(',') != std::string::npos) {
        TomlValue v;
        std::stringstream ss(raw);
        std::string part;
        bool numbers = true;
        std::vector<std::string> parts;
        while (std::getline(ss, part, ',')) parts.push_back(detail::trim(part));
        for (const auto& p : parts) {
            try {
                std::size_t used = 0;
                (void)std::stod(p, &used);
                if (used != p.size()) numbers = false;
            } catch (...) {
                numbers = false;
            }
        }
        if (numbers) {
            v.kind = TomlValue::Kind::NumberList;
            for (const auto& p : parts) v.nums.push_back(std::stod(p));
        } else {
            v.kind = TomlValue::Kind::StringList;
            v.strs = parts;
        }
        return v;
    }
    if (raw == "true" || raw == "false") {
        TomlValue v;
        v.kind = TomlValue::Kind::Bool;
        v.boolean = raw == "true";
        return v;
    }
    try {
        std::size_t used = 0;
        const double d = std::stod(raw, &used);
        if (used == raw.size()) {
            TomlValue v;
            v.kind = TomlValue::Kind::Number;
            v.num = d;
            return v;
        }
    } catch (...) {
    }
    TomlValue v;
    v.kind = TomlValue::Kind::String;
    v.str = raw;
    return v;
}

// ---------------------------------------------------------------------------
// resolved-config digest

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j = pretrain::config_to_json(cfg.train);
    j["data"] = {{"manifest", cfg.data_manifest},
                 {"train_split", cfg.train_split},
                 {"test_split", cfg.test_split}};
    return j;
}

/// FNV-1a over the canonical (sorted-key) JSON dump of the resolved config.
inline std::string config_digest(const RunConfig& cfg) {
    const std::string dump = run_config_to_json(cfg).dump();
    const std::uint64_t h = hash_name(dump);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace usdrl::config
