#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xdseg/errors.hpp"
#include "xdseg/evaluate.hpp"
#include "xdseg/fusion.hpp"
#include "xdseg/kernels.hpp"
#include "xdseg/manifest.hpp"
#include "xdseg/phantom.hpp"
#include "xdseg/pipeline.hpp"
#include "xdseg/rng.hpp"
#include "xdseg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xdseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIntegrity = 4;
constexpr int kExitInternal = 5;

void print_error(const char* category, const std::string& message) {
    std::cerr << json{{"error", {{"category", category}, {"message", message}}}}.dump() << '\n';
}

// Output root: explicit flag first, then the XDSEG_OUT environment variable.
std::string resolve_out(const std::string& flag_value, const char* what) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("XDSEG_OUT")) {
        if (*env) return env;
    }
    throw ConfigError(std::string(what) + ": no output path; pass --out or set XDSEG_OUT");
}

KeyValueConfig load_kv(const std::string& config_path) {
    return config_path.empty() ? KeyValueConfig{} : KeyValueConfig::from_file(config_path);
}

// Settings shared by all training subcommands. Precedence for every value:
// command-line flag > XDSEG_* environment variable > config file > preset.
struct TrainArgs {
    std::string config_path;
    std::string manifest;
    std::string out;
    std::uint64_t seed = 7;
    std::string domain;
    std::vector<std::string> train_splits;
    std::string val_split;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double learning_rate = 0.0;

    CLI::Option* epochs_opt = nullptr;
    CLI::Option* batch_opt = nullptr;
    CLI::Option* lr_opt = nullptr;
    CLI::Option* domain_opt = nullptr;
    CLI::Option* val_opt = nullptr;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--config", config_path, "key = value settings file");
        cmd.add_option("--manifest", manifest, "dataset manifest JSON")->required();
        cmd.add_option("--out", out, "run output directory (default: $XDSEG_OUT)");
        cmd.add_option("--seed", seed, "run seed")->capture_default_str();
        domain_opt = cmd.add_option("--domain", domain, "source|target")->check(CLI::IsMember({"source", "target"}));
        cmd.add_option("--train-split", train_splits, "training split name (repeatable)");
        val_opt = cmd.add_option("--val-split", val_split, "validation split name");
        epochs_opt = cmd.add_option("--epochs", epochs, "training epochs");
        batch_opt = cmd.add_option("--batch-size", batch_size, "mini-batch size");
        lr_opt = cmd.add_option("--lr", learning_rate, "learning rate");
    }

    // Fills cfg from the preset already inside it, then file/env, then flags.
    void apply(RunConfig& cfg, const char* key_prefix, const char* cmd_name) const {
        const KeyValueConfig kv = load_kv(config_path);
        const std::string p(key_prefix);
        cfg.epochs = kv.get_size(p + ".epochs", cfg.epochs);
        cfg.batch_size = kv.get_size(p + ".batch_size", cfg.batch_size);
        cfg.learning_rate = kv.get_double(p + ".learning_rate", cfg.learning_rate);

        cfg.manifest_path = manifest;
        cfg.output_dir = resolve_out(out, cmd_name);
        cfg.seed = seed;
        if (domain_opt->count()) cfg.domain = domain_from_string(domain);
        if (!train_splits.empty()) cfg.train_splits = train_splits;
        if (val_opt->count()) cfg.val_split = val_split;
        if (epochs_opt->count()) cfg.epochs = epochs;
        if (batch_opt->count()) cfg.batch_size = batch_size;
        if (lr_opt->count()) cfg.learning_rate = learning_rate;
    }
};

void emit_train_summary(const char* command, const RunConfig& cfg, const TrainResult& r) {
    json j{{"command", command},
           {"output_dir", cfg.output_dir},
           {"epochs", r.log.records.size()},
           {"best_epoch", r.log.best_epoch},
           {"final_checkpoint", r.final_checkpoint.string()},
           {"best_checkpoint", r.best_checkpoint.string()}};
    if (r.log.best_val_loss) j["best_loss"] = *r.log.best_val_loss;
    std::cout << j.dump() << '\n';
}

std::vector<std::pair<std::string, double>> parse_fractions(const std::string& spec) {
    std::vector<std::pair<std::string, double>> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        std::size_t end = spec.find(',', start);
        if (end == std::string::npos) end = spec.size();
        const std::string part = spec.substr(start, end - start);
        if (!part.empty()) {
            const std::size_t eq = part.find('=');
            if (eq == std::string::npos)
                throw ConfigError("split: fraction '" + part + "' is not name=value");
            try {
                out.emplace_back(part.substr(0, eq), std::stod(part.substr(eq + 1)));
            } catch (const std::exception&) {
                throw ConfigError("split: fraction '" + part + "' is not name=value");
            }
        }
        start = end + 1;
    }
    if (out.empty()) throw ConfigError("split: no fractions given");
    return out;
}

std::set<ParamGroup> parse_groups(const std::string& spec) {
    std::set<ParamGroup> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        std::size_t end = spec.find(',', start);
        if (end == std::string::npos) end = spec.size();
        const std::string part = spec.substr(start, end - start);
        if (!part.empty()) out.insert(param_group_from_string(part));
        start = end + 1;
    }
    return out;
}

// Sorted prediction ids (.f32 stems) in a directory.
std::vector<std::string> raster_ids(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("fuse: " + dir.string() + " is not a directory");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".f32")
            ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("fuse: no .f32 rasters under " + dir.string());
    return ids;
}

void register_commands(CLI::App& app) {
    app.require_subcommand(1);

    // ---- phantom ---------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("phantom", "generate the synthetic two-domain dataset");
        struct Args {
            std::string out, domain = "source";
            std::size_t patients = 8, videos = 1, frames = 8, image_size = 64;
            std::uint64_t seed = 7;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--out", a->out, "dataset directory (default: $XDSEG_OUT)");
        cmd->add_option("--domain", a->domain, "source|target")->capture_default_str()->check(CLI::IsMember({"source", "target"}));
        cmd->add_option("--patients", a->patients, "patients to synthesize")->capture_default_str();
        cmd->add_option("--videos", a->videos, "videos per patient")->capture_default_str();
        cmd->add_option("--frames", a->frames, "frames per video")->capture_default_str();
        cmd->add_option("--image-size", a->image_size, "square frame edge, pixels")->capture_default_str();
        cmd->add_option("--seed", a->seed, "generator seed")->capture_default_str();
        cmd->callback([a] {
            const std::string out = resolve_out(a->out, "phantom");
            const Domain d = domain_from_string(a->domain);
            PhantomConfig cfg = d == Domain::source ? PhantomConfig::profile_a(a->seed)
                                                    : PhantomConfig::profile_b(a->seed);
            cfg.num_patients = a->patients;
            cfg.videos_per_patient = a->videos;
            cfg.frames_per_video = a->frames;
            cfg.image_size = a->image_size;
            Manifest m = generate_phantom(cfg, out);
            const fs::path mpath = fs::path(out) / "manifest.json";
            save_manifest(mpath.string(), m);
            std::cout << json{{"command", "phantom"},
                              {"manifest", mpath.string()},
                              {"frames", m.records.size()}}
                             .dump()
                      << '\n';
        });
    }

    // ---- split -----------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("split", "assign patients to named splits");
        struct Args {
            std::string manifest, out, fractions = "train=0.8,val=0.2";
            std::uint64_t seed = 7;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--manifest", a->manifest, "input manifest JSON")->required();
        cmd->add_option("--out", a->out, "output manifest path (default: overwrite input)");
        cmd->add_option("--fractions", a->fractions, "name=frac,name=frac,...")->capture_default_str();
        cmd->add_option("--seed", a->seed, "shuffle seed")->capture_default_str();
        cmd->callback([a] {
            const Manifest m = load_manifest(a->manifest);
            const Manifest s = patient_split(m, parse_fractions(a->fractions), a->seed);
            const std::string out = a->out.empty() ? a->manifest : a->out;
            save_manifest(out, s);
            json counts = json::object();
            for (const auto& [patient, split] : s.split_assignment)
                counts[split] = counts.value(split, 0) + 1;
            std::cout << json{{"command", "split"}, {"manifest", out}, {"patients", counts}}.dump()
                      << '\n';
        });
    }

    // ---- pretrain-mim ----------------------------------------------------
    {
        auto* cmd = app.add_subcommand("pretrain-mim",
                                       "masked-patch reconstruction pretraining (unlabeled)");
        auto a = std::make_shared<TrainArgs>();
        a->add_to(*cmd);
        cmd->callback([a] {
            RunConfig cfg = RunConfig::desk_mim();
            a->apply(cfg, "mim", "pretrain-mim");
            const TrainResult r = pretrain_mim(cfg);
            emit_train_summary("pretrain-mim", cfg, r);
        });
    }

    // ---- pretrain-contrastive --------------------------------------------
    {
        auto* cmd = app.add_subcommand("pretrain-contrastive",
                                       "temporally masked contrastive pretraining (unlabeled)");
        auto a = std::make_shared<TrainArgs>();
        a->add_to(*cmd);
        cmd->callback([a] {
            RunConfig cfg = RunConfig::desk_contrastive();
            a->apply(cfg, "contrastive", "pretrain-contrastive");
            const TrainResult r = pretrain_contrastive(cfg);
            emit_train_summary("pretrain-contrastive", cfg, r);
        });
    }

    // ---- finetune --------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("finetune", "supervised segmentation training");
        auto a = std::make_shared<TrainArgs>();
        a->add_to(*cmd);
        auto init_ckpt = std::make_shared<std::string>();
        auto groups = std::make_shared<std::string>("embedding,encoder");
        cmd->add_option("--init-checkpoint", *init_ckpt, "pretrained checkpoint to start from");
        cmd->add_option("--transfer-groups", *groups,
                        "comma list of parameter groups taken from the checkpoint")->capture_default_str();
        cmd->callback([a, init_ckpt, groups] {
            RunConfig cfg = RunConfig::desk_finetune();
            a->apply(cfg, "finetune", "finetune");
            std::optional<FinetuneInit> init;
            if (!init_ckpt->empty()) init = FinetuneInit{*init_ckpt, parse_groups(*groups)};
            const TrainResult r = finetune(cfg, init);
            emit_train_summary("finetune", cfg, r);
        });
    }

    // ---- infer -----------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("infer", "write probability rasters for a split");
        struct Args {
            std::string checkpoint, manifest, out, split = "test", domain = "target";
            bool png = false;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--checkpoint", a->checkpoint, "model checkpoint")->required();
        cmd->add_option("--manifest", a->manifest, "dataset manifest JSON")->required();
        cmd->add_option("--out", a->out, "raster directory (default: $XDSEG_OUT)");
        cmd->add_option("--split", a->split, "split to run")->capture_default_str();
        cmd->add_option("--domain", a->domain, "source|target")->capture_default_str()->check(CLI::IsMember({"source", "target"}));
        cmd->add_flag("--png", a->png, "also write 8-bit PNG probability maps");
        cmd->callback([a] {
            const std::string out = resolve_out(a->out, "infer");
            const Manifest m = load_manifest(a->manifest);
            run_inference(a->checkpoint, BackboneConfig::desk(), m, a->split,
                          domain_from_string(a->domain), out, a->png);
            std::cout << json{{"command", "infer"}, {"output_dir", out}}.dump() << '\n';
        });
    }

    // ---- fuse ------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand(
            "fuse", "confidence-weighted average of two prediction directories");
        struct Args {
            std::string a_dir, b_dir, out, strategy = "entropy", scope = "per_image";
            double threshold = 0.5;
            bool natural_log = false;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--a", a->a_dir, "first branch rasters (.f32)")->required();
        cmd->add_option("--b", a->b_dir, "second branch rasters (.f32)")->required();
        cmd->add_option("--out", a->out, "fused raster directory (default: $XDSEG_OUT)");
        cmd->add_option("--strategy", a->strategy, "entropy|margin|average")->capture_default_str();
        cmd->add_option("--scope", a->scope, "per_image|per_batch")->capture_default_str();
        cmd->add_option("--threshold", a->threshold, "binary mask cut, inclusive")->capture_default_str();
        cmd->add_flag("--natural-log", a->natural_log, "entropy with ln instead of log2");
        cmd->callback([a] {
            const std::string out = resolve_out(a->out, "fuse");
            const std::vector<std::string> ids = raster_ids(a->a_dir);
            FusionInputs in;
            in.strategy = fusion_strategy_from_string(a->strategy);
            in.scope = fusion_scope_from_string(a->scope);
            in.natural_log = a->natural_log;
            in.threshold = a->threshold;
            std::vector<std::string> missing;
            for (const std::string& id : ids) {
                const fs::path pb = fs::path(a->b_dir) / (id + ".f32");
                if (!fs::exists(pb)) {
                    missing.push_back(id);
                    continue;
                }
                in.p_g.push_back(load_raster((fs::path(a->a_dir) / (id + ".f32")).string()));
                in.p_c.push_back(load_raster(pb.string()));
            }
            if (!missing.empty()) {
                std::string msg = "fuse: no second-branch raster for:";
                for (const std::string& id : missing) msg += " " + id;
                throw DataError(msg);
            }
            const FusedPrediction fused = fuse(in);
            fs::create_directories(out);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                save_raster((fs::path(out) / (ids[i] + ".f32")).string(),
                            fused.probabilities[i]);
                save_png((fs::path(out) / (ids[i] + "_mask.png")).string(),
                         fused.binary_mask[i]);
            }
            std::cout << json{{"command", "fuse"}, {"output_dir", out}, {"images", ids.size()}}
                             .dump()
                      << '\n';
        });
    }

    // ---- evaluate --------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("evaluate", "score predictions against ground truth");
        struct Args {
            std::string pred, manifest, out, run_name = "run", split = "test",
                        domain = "target";
            double threshold = 0.5;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--pred", a->pred, "prediction raster directory")->required();
        cmd->add_option("--manifest", a->manifest, "dataset manifest JSON")->required();
        cmd->add_option("--out", a->out, "scores CSV path (default: $XDSEG_OUT)");
        cmd->add_option("--run-name", a->run_name, "label used in reports")->capture_default_str();
        cmd->add_option("--split", a->split, "split to score")->capture_default_str();
        cmd->add_option("--domain", a->domain, "source|target")->capture_default_str()->check(CLI::IsMember({"source", "target"}));
        cmd->add_option("--threshold", a->threshold, "probability cut, inclusive")->capture_default_str();
        cmd->callback([a] {
            const std::string out = resolve_out(a->out, "evaluate");
            const Manifest m = load_manifest(a->manifest);
            const RunEvaluation ev = evaluate_run(a->run_name, m, a->split,
                                                  domain_from_string(a->domain), a->pred,
                                                  a->threshold);
            write_scores_csv(out, ev);
            std::cout << json{{"command", "evaluate"},
                              {"scores", out},
                              {"n_images", ev.scores.size()},
                              {"mean_dsc", ev.mean_dsc},
                              {"mean_iou", ev.mean_iou}}
                             .dump()
                      << '\n';
        });
    }

    // ---- report ----------------------------------------------------------
    {
        auto* cmd =
            app.add_subcommand("report", "aggregate score files and run paired tests");
        struct Args {
            std::vector<std::string> scores;  // name=path
            std::string out;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--scores", a->scores, "name=scores.csv (repeatable, report order)")
            ->required();
        cmd->add_option("--out", a->out, "report JSON path (default: $XDSEG_OUT)");
        cmd->callback([a] {
            const std::string out = resolve_out(a->out, "report");
            std::vector<RunEvaluation> runs;
            for (const std::string& spec : a->scores) {
                const std::size_t eq = spec.find('=');
                if (eq == std::string::npos || eq == 0)
                    throw ConfigError("report: --scores expects name=path, got '" + spec + "'");
                runs.push_back(read_scores_csv(spec.substr(eq + 1), spec.substr(0, eq)));
            }
            emit_report(runs, out);
            std::cout << json{{"command", "report"}, {"report", out}, {"runs", runs.size()}}
                             .dump()
                      << '\n';
        });
    }

    // ---- reproduce -------------------------------------------------------
    {
        auto* cmd = app.add_subcommand(
            "reproduce", "full experiment: data, pretraining, fine-tuning, fusion, report");
        struct Args {
            std::string config_path, out, strategy, scope;
            std::uint64_t seed = 7;
        };
        auto a = std::make_shared<Args>();
        cmd->add_option("--config", a->config_path, "key = value settings file");
        cmd->add_option("--out", a->out, "experiment directory (default: $XDSEG_OUT)");
        cmd->add_option("--seed", a->seed, "master seed; every stage derives from it")->capture_default_str();
        cmd->add_option("--strategy", a->strategy, "fusion strategy: entropy|margin|average");
        cmd->add_option("--scope", a->scope, "fusion scope: per_image|per_batch");
        cmd->callback([a] {
            PipelineConfig cfg;
            cfg.apply(load_kv(a->config_path));
            cfg.out = resolve_out(a->out, "reproduce");
            cfg.seed = a->seed;
            if (!a->strategy.empty()) cfg.strategy = fusion_strategy_from_string(a->strategy);
            if (!a->scope.empty()) cfg.scope = fusion_scope_from_string(a->scope);
            const PipelineResult r = run_pipeline(cfg);
            json dsc = json::object();
            for (const auto& [name, v] : r.mean_dsc) dsc[name] = v;
            json iso = json::object();
            for (const auto& [name, v] : r.isolation) iso[name] = v;
            std::cout << json{{"command", "reproduce"},
                              {"report", r.report_path.string()},
                              {"audit", r.audit_path.string()},
                              {"mean_dsc", dsc},
                              {"fused_threshold", r.fused_threshold},
                              {"isolation", iso}}
                             .dump()
                      << '\n';
        });
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain self-supervised ultrasound segmentation toolkit"};
    kernels::init_backend_from_env();
    register_commands(app);
    try {
        app.parse(argc, argv);
        return kExitOk;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return kExitConfig;
    } catch (const ConfigError& e) {
        print_error("config", e.what());
        return kExitConfig;
    } catch (const InvalidInput& e) {
        print_error("config", e.what());
        return kExitConfig;
    } catch (const DataError& e) {
        print_error("data", e.what());
        return kExitData;
    } catch (const IntegrityError& e) {
        print_error("integrity", e.what());
        return kExitIntegrity;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return kExitInternal;
    } catch (...) {
        print_error("internal", "unknown error");
        return kExitInternal;
    }
}
