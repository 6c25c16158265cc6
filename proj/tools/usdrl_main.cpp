#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "usdrl/cli.hpp"

namespace {

/// Pulls --section.key value (or --section.key=value) overrides out of argv;
/// anything matching the config schema is consumed here, the rest goes to
/// CLI11.
std::vector<std::string> extract_overrides(std::vector<std::string>& args,
                                           std::map<std::string, usdrl::config::TomlValue>& out) {
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) == 0) {
            std::string key = a.substr(2);
            std::string value;
            bool has_value = false;
            const auto eq = key.find('=');
            if (eq != std::string::npos) {
                value = key.substr(eq + 1);
                key = key.substr(0, eq);
                has_value = true;
            }
            if (key.find('.') != std::string::npos && usdrl::config::find_entry(key)) {
                if (!has_value) {
                    if (i + 1 >= args.size())
                        throw std::runtime_error("override --" + key + " needs a value");
                    value = args[++i];
                }
                out[key] = usdrl::config::value_from_cli(value);
                continue;
            }
        }
        rest.push_back(a);
    }
    return rest;
}

std::string config_key_help() {
    std::string out = "Config keys (settable in the TOML file or as --<key> <value> overrides):\n";
    for (const auto& e : usdrl::config::schema()) {
        out += "  --" + e.key;
        out.append(e.key.size() < 28 ? 28 - e.key.size() : 1, ' ');
        out += e.doc + "\n";
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace usdrl;

    std::vector<std::string> raw_args(argv + 1, argv + argc);
    std::map<std::string, config::TomlValue> overrides;
    std::string config_path, out_dir, resume_path, export_csv;
    std::uint64_t seed = 0;
    bool seed_given = false;

    try {
        raw_args = extract_overrides(raw_args, overrides);

        CLI::App app{"USDRL: dense skeleton representation pretraining and evaluation"};
        app.footer(config_key_help());
        app.require_subcommand(1);
        app.set_help_all_flag("--help-all", "print help for all subcommands");

        app.add_option("--config", config_path, "TOML config file")->envname("USDRL_CONFIG");
        app.add_option("--out-dir", out_dir, "output directory for reports and artifacts");
        auto* seed_opt = app.add_option("--seed", seed, "master seed override");

        cli::SynthArgs synth;
        auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
        synth_cmd->fallthrough();
        synth_cmd->add_option("--classes", synth.classes, "number of classes");
        synth_cmd->add_option("--per-class", synth.per_class, "records per class per split");
        synth_cmd->add_option("--frames", synth.frames, "raw frames per record");
        synth_cmd->add_option("--joints", synth.joints, "joint count");
        synth_cmd->add_option("--persons", synth.persons, "person slots");
        synth_cmd->add_option("--videos", synth.videos,
                              "untrimmed videos per split for detection/segmentation");
        synth_cmd->add_option("--segments-per-video", synth.segments_per_video,
                              "action segments per untrimmed video");

        auto* pretrain_cmd = app.add_subcommand("pretrain", "self-supervised pretraining");
        pretrain_cmd->fallthrough();
        pretrain_cmd->add_option("--resume", resume_path, "resume from a checkpoint");

        cli::EvalArgs eval;
        auto* eval_cmd = app.add_subcommand("eval", "evaluate a pretrained checkpoint");
        eval_cmd->fallthrough();
        eval_cmd->require_subcommand(1);
        std::map<std::string, CLI::App*> eval_subs;
        for (const char* task :
             {"probe", "knn", "semi", "detect", "segment", "predict", "transfer", "ensemble"}) {
            auto* sub = eval_cmd->add_subcommand(task);
            sub->fallthrough();
            sub->add_option("--checkpoint", eval.checkpoints, "checkpoint path (repeatable)");
            sub->add_option("--data", eval.data_manifest, "dataset manifest");
            sub->add_option("--train-split", eval.train_split, "train split name");
            sub->add_option("--test-split", eval.test_split, "test split name");
            sub->add_option("--epochs", eval.epochs, "head/fine-tune epochs");
            sub->add_option("--lr", eval.lr, "head/fine-tune learning rate");
            eval_subs[task] = sub;
        }
        eval_subs["semi"]->add_option("--fraction", eval.fraction, "labeled fraction");
        eval_subs["detect"]->add_option("--iou", eval.iou, "IoU threshold for the headline mAP");
        eval_subs["detect"]->add_option("--preds", eval.preds_path,
                                        "prediction JSONL (skips model inference)");
        eval_subs["detect"]->add_option("--min-len", eval.min_len, "minimum segment length");
        eval_subs["detect"]->add_option("--smooth", eval.smooth_win, "median smoothing window");
        eval_subs["detect"]->add_option("--stride", eval.stride, "sliding window stride");
        eval_subs["segment"]->add_option("--preds", eval.preds_path,
                                         "prediction JSONL (skips model inference)");
        eval_subs["segment"]->add_option("--stride", eval.stride, "sliding window stride");

        auto* export_cmd = app.add_subcommand("export-embeddings",
                                              "write instance embeddings as CSV");
        export_cmd->fallthrough();
        export_cmd->add_option("--checkpoint", eval.checkpoints, "checkpoint path");
        export_cmd->add_option("--data", eval.data_manifest, "dataset manifest");
        export_cmd->add_option("--split", eval.test_split, "split to embed");
        export_cmd->add_option("--out", export_csv, "output CSV path");

        cli::GradCheckArgs gc;
        auto* gc_cmd = app.add_subcommand("gradcheck",
                                          "finite-difference gradient verification");
        gc_cmd->fallthrough();
        gc_cmd->add_option("--step", gc.h, "central difference step");
        gc_cmd->add_option("--tolerance", gc.tolerance, "max relative error allowed");
        gc_cmd->add_option("--max-entries", gc.max_entries, "entries checked per array");

        std::vector<const char*> argv2;
        argv2.push_back(argv[0]);
        for (const auto& s : raw_args) argv2.push_back(s.c_str());
        try {
            app.parse(static_cast<int>(argv2.size()), argv2.data());
        } catch (const CLI::ParseError& e) {
            return app.exit(e);
        }
        seed_given = seed_opt->count() > 0;

        config::RunConfig cfg;
        if (!config_path.empty()) cfg = config::load_run_config(config_path);
        config::apply_values(cfg, overrides);
        if (seed_given) cfg.train.seed = seed;

        eval.out_dir = out_dir;
        eval.seed = seed_given ? seed : cfg.train.seed;
        if (!eval.checkpoints.empty()) eval.checkpoint = eval.checkpoints.front();
        if (eval.data_manifest.empty()) eval.data_manifest = cfg.data_manifest;

        if (synth_cmd->parsed()) {
            synth.seed = seed_given ? seed : synth.seed;
            synth.out_dir = out_dir.empty() ? synth.out_dir : out_dir;
            return cli::cmd_synth(synth);
        }
        if (pretrain_cmd->parsed()) return cli::cmd_pretrain(cfg, out_dir, resume_path);
        if (eval_subs["probe"]->parsed()) return cli::cmd_eval_probe(eval);
        if (eval_subs["knn"]->parsed()) return cli::cmd_eval_knn(eval);
        if (eval_subs["semi"]->parsed()) return cli::cmd_eval_semi(eval);
        if (eval_subs["detect"]->parsed()) return cli::cmd_eval_detect(eval);
        if (eval_subs["segment"]->parsed()) return cli::cmd_eval_segment(eval);
        if (eval_subs["predict"]->parsed()) return cli::cmd_eval_predict(eval);
        if (eval_subs["transfer"]->parsed()) return cli::cmd_eval_transfer(eval);
        if (eval_subs["ensemble"]->parsed()) return cli::cmd_eval_ensemble(eval);
        if (export_cmd->parsed()) return cli::cmd_export_embeddings(eval, export_csv);
        if (gc_cmd->parsed()) {
            gc.out_dir = out_dir;
            if (seed_given) gc.seed = seed;
            return cli::cmd_gradcheck(gc);
        }
        std::fprintf(stderr, "no subcommand given\n");
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
