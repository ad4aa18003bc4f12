#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "xdseg/checkpoint.hpp"
#include "xdseg/errors.hpp"
#include "xdseg/evaluate.hpp"
#include "xdseg/image.hpp"
#include "xdseg/manifest.hpp"
#include "xdseg/phantom.hpp"
#include "xdseg/train.hpp"

using namespace xdseg;
namespace fs = std::filesystem;

namespace {

// One small two-domain dataset shared by every case in this binary: 3
// patients per domain, 4 frames each, at the 16 px geometry of the tiny
// backbone so two-epoch runs finish in seconds.
struct Dataset {
    fs::path root;
    fs::path manifest_path;
};

const Dataset& dataset() {
    static std::optional<Dataset> ds;
    if (!ds) {
        Dataset d;
        d.root = fs::temp_directory_path() / "xdseg_training_data";
        fs::remove_all(d.root);
        fs::create_directories(d.root);

        PhantomConfig src = PhantomConfig::profile_a(501);
        src.num_patients = 3;
        src.frames_per_video = 4;
        src.image_size = 16;
        Manifest ms = generate_phantom(src, d.root.string());

        PhantomConfig tgt = PhantomConfig::profile_b(502);
        tgt.num_patients = 3;
        tgt.frames_per_video = 4;
        tgt.image_size = 16;
        Manifest mt = generate_phantom(tgt, d.root.string());

        ms = patient_split(ms, {{"train", 2.0 / 3.0}, {"val", 1.0 / 3.0}}, 11);
        mt = patient_split(mt, {{"train", 1.0 / 3.0}, {"val", 1.0 / 3.0}, {"test", 1.0 / 3.0}},
                           12);
        Manifest merged = ms;
        merged.records.insert(merged.records.end(), mt.records.begin(), mt.records.end());
        merged.split_assignment.insert(mt.split_assignment.begin(), mt.split_assignment.end());
        d.manifest_path = d.root / "manifest.json";
        save_manifest(d.manifest_path.string(), merged);
        ds = d;
    }
    return *ds;
}

fs::path fresh_out(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("xdseg_training_" + name);
    fs::remove_all(p);
    return p;
}

RunConfig base_config(Stage stage, const std::string& out_name) {
    RunConfig c;
    c.stage = stage;
    c.manifest_path = dataset().manifest_path.string();
    c.backbone = BackboneConfig::tiny();
    c.augment.output_size = 16;
    c.epochs = 2;
    c.batch_size = 4;
    c.seed = 40;
    c.mask_patch = 4;
    c.output_dir = fresh_out(out_name).string();
    return c;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    return out;
}

bool reads_any_mask(const std::vector<std::string>& files) {
    return std::any_of(files.begin(), files.end(), [](const std::string& f) {
        return f.find("masks/") != std::string::npos;
    });
}

}  // namespace

TEST_CASE("reconstruction pretraining trains, checkpoints, and never opens labels") {
    RunConfig cfg = base_config(Stage::pretrain_mim, "mim");
    cfg.domain = Domain::target;
    const TrainResult res = pretrain_mim(cfg);

    CHECK(fs::exists(res.final_checkpoint));
    CHECK(fs::exists(res.best_checkpoint));
    REQUIRE(res.log.records.size() == 2);
    CHECK(res.log.records[0].epoch == 1);
    CHECK(res.log.records[1].epoch == 2);
    for (const auto& r : res.log.records) {
        CHECK(std::isfinite(r.train_loss));
        CHECK(r.wall_time_sec >= 0.0);
        CHECK_FALSE(r.val_loss.has_value());  // no val split configured
    }

    // unlabeled stage: target images only, relative paths, no masks
    CHECK_FALSE(res.files_read.empty());
    CHECK_FALSE(reads_any_mask(res.files_read));
    for (const auto& f : res.files_read) {
        CHECK_FALSE(f.empty());
        CHECK(f.front() != '/');
        CHECK(f.find("images/") != std::string::npos);
        CHECK(f.find("tgt") != std::string::npos);
    }

    const Checkpoint ck = load_checkpoint(res.final_checkpoint);
    CHECK(ck.meta.stage == "pretrain_mim");
    CHECK(ck.meta.config_digest == cfg.backbone.digest());
    CHECK(ck.meta.epoch == 2);

    // the log file holds one line per epoch plus a summary line
    const auto lines = read_jsonl(fs::path(cfg.output_dir) / "train_log.jsonl");
    REQUIRE(lines.size() == 3);
    CHECK(lines[0]["epoch"] == 1);
    CHECK(lines[0].contains("train_loss"));
    CHECK(lines[0].contains("wall_time"));
    CHECK(lines[2].contains("best_epoch"));

    const auto run = nlohmann::json::parse(file_bytes(fs::path(cfg.output_dir) / "run.json"));
    CHECK(run["files_read"].size() == res.files_read.size());
    CHECK(run["parameter_count"].get<std::size_t>() > 0);

    // same config, fresh directory: checkpoint bytes reproduce exactly
    RunConfig cfg2 = cfg;
    cfg2.output_dir = fresh_out("mim_repeat").string();
    const TrainResult res2 = pretrain_mim(cfg2);
    CHECK(file_bytes(res.final_checkpoint) == file_bytes(res2.final_checkpoint));
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(res.log.records[i].train_loss == res2.log.records[i].train_loss);

    // a different seed must move the weights
    RunConfig cfg3 = cfg;
    cfg3.seed = 41;
    cfg3.output_dir = fresh_out("mim_seed").string();
    const TrainResult res3 = pretrain_mim(cfg3);
    CHECK(file_bytes(res.final_checkpoint) != file_bytes(res3.final_checkpoint));
}

TEST_CASE("contrastive pretraining trains on unlabeled target frames") {
    RunConfig cfg = base_config(Stage::pretrain_contrastive, "con");
    cfg.domain = Domain::target;
    cfg.min_frame_gap = 2;
    const TrainResult res = pretrain_contrastive(cfg);

    CHECK(fs::exists(res.final_checkpoint));
    REQUIRE(res.log.records.size() == 2);
    for (const auto& r : res.log.records) CHECK(std::isfinite(r.train_loss));
    CHECK_FALSE(reads_any_mask(res.files_read));

    const Checkpoint ck = load_checkpoint(res.final_checkpoint);
    CHECK(ck.meta.stage == "pretrain_contrastive");

    // stage guard: handing a contrastive config to the wrong loop is refused
    CHECK_THROWS_AS((void)pretrain_mim(cfg), ConfigError);
}

TEST_CASE("run configuration validation") {
    RunConfig cfg = base_config(Stage::finetune, "val_cfg");
    RunConfig bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.train_splits.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = base_config(Stage::pretrain_mim, "val_cfg2");
    bad.mask_patch = 3;  // does not divide 16
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = base_config(Stage::pretrain_contrastive, "val_cfg3");
    bad.augment.output_size = 32;  // contradicts the 16 px backbone
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    for (RunConfig preset : {RunConfig::desk_mim(), RunConfig::desk_contrastive(),
                             RunConfig::desk_finetune(), RunConfig::full_mim(),
                             RunConfig::full_contrastive(), RunConfig::full_finetune()}) {
        preset.manifest_path = "m.json";
        preset.output_dir = "out";
        preset.validate();
    }
}

TEST_CASE("fine-tuning keeps the lowest-validation-loss checkpoint") {
    RunConfig cfg = base_config(Stage::finetune, "ft_scratch");
    cfg.domain = Domain::source;
    cfg.val_split = "val";
    cfg.epochs = 3;
    const TrainResult res = finetune(cfg, std::nullopt);

    REQUIRE(res.log.records.size() == 3);
    double best = 1e30;
    std::size_t best_ep = 0;
    for (const auto& r : res.log.records) {
        REQUIRE(r.val_loss.has_value());
        if (*r.val_loss < best) {
            best = *r.val_loss;
            best_ep = r.epoch;
        }
    }
    CHECK(res.log.best_epoch == best_ep);
    REQUIRE(res.log.best_val_loss.has_value());
    CHECK(*res.log.best_val_loss == doctest::Approx(best).epsilon(1e-12));

    const Checkpoint bestck = load_checkpoint(res.best_checkpoint);
    CHECK(bestck.meta.epoch == static_cast<std::int64_t>(best_ep));
    CHECK(bestck.meta.stage == "baseline");  // no pretrained init

    // supervised training must read masks, and only source-domain files
    CHECK(reads_any_mask(res.files_read));
    for (const auto& f : res.files_read) CHECK(f.find("src") != std::string::npos);
}

TEST_CASE("fine-tuning from a pretrained checkpoint transfers the right groups") {
    RunConfig mim_cfg = base_config(Stage::pretrain_mim, "mim_for_ft");
    mim_cfg.domain = Domain::target;
    const TrainResult mim = pretrain_mim(mim_cfg);
    const auto donor_digests = group_digests(load_checkpoint(mim.best_checkpoint));

    RunConfig cfg = base_config(Stage::finetune, "ft_init");
    cfg.domain = Domain::source;
    cfg.val_split = "val";
    const FinetuneInit init{mim.best_checkpoint, {ParamGroup::embedding, ParamGroup::encoder}};
    const TrainResult res = finetune(cfg, init);

    const Checkpoint ck = load_checkpoint(res.best_checkpoint);
    CHECK(ck.meta.stage == "finetune");

    const auto run = nlohmann::json::parse(file_bytes(fs::path(cfg.output_dir) / "run.json"));
    REQUIRE(run.contains("transfer"));
    CHECK(run["transfer"]["checkpoint"] == mim.best_checkpoint.string());
    REQUIRE(run["transfer"]["groups"].size() == kAllGroups.size());
    for (const auto& g : run["transfer"]["groups"]) {
        const std::string name = g["group"];
        const bool wanted = name == "embedding" || name == "encoder";
        CHECK(g["transferred"] == wanted);
        const ParamGroup pg = param_group_from_string(name);
        if (wanted)  // post-transfer digest equals the donor's
            CHECK(g["digest"] == donor_digests.at(pg));
        else  // everything else starts from a fresh draw
            CHECK(g["digest"] != donor_digests.at(pg));
    }

    // decoder and head can never ride along
    const FinetuneInit bad{mim.best_checkpoint, {ParamGroup::decoder}};
    RunConfig cfg2 = base_config(Stage::finetune, "ft_badgroup");
    CHECK_THROWS_WITH_AS((void)finetune(cfg2, bad), doctest::Contains("decoder"), ConfigError);

    // a checkpoint from a different backbone geometry is rejected up front
    BackboneConfig other = BackboneConfig::tiny();
    other.encoder_dim = 32;
    SegModel donor(other, 1);
    CheckpointMeta meta;
    meta.stage = "pretrain_mim";
    meta.config_digest = other.digest();
    const fs::path alien = fresh_out("alien");
    fs::create_directories(alien);
    save_checkpoint(snapshot(donor, meta), alien / "alien.ckpt");
    RunConfig cfg3 = base_config(Stage::finetune, "ft_alien");
    const FinetuneInit mismatched{alien / "alien.ckpt",
                                  {ParamGroup::embedding, ParamGroup::encoder}};
    CHECK_THROWS_WITH_AS((void)finetune(cfg3, mismatched), doctest::Contains("backbone"),
                         ConfigError);
}

TEST_CASE("inference writes one probability raster per frame") {
    RunConfig cfg = base_config(Stage::finetune, "ft_for_infer");
    cfg.domain = Domain::source;
    cfg.val_split = "val";
    const TrainResult res = finetune(cfg, std::nullopt);

    const Manifest m = load_manifest(dataset().manifest_path.string());
    const auto test_frames = m.frames("test", Domain::target);
    REQUIRE_FALSE(test_frames.empty());

    const fs::path out = fresh_out("pred");
    run_inference(res.best_checkpoint, cfg.backbone, m, "test", Domain::target, out);
    for (const auto* r : test_frames) {
        const fs::path raster = out / (frame_id(*r) + ".f32");
        REQUIRE(fs::exists(raster));
        const Image p = load_raster(raster.string());
        CHECK(p.h == 16);
        CHECK(p.w == 16);
        for (float v : p.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        CHECK_FALSE(fs::exists(out / (frame_id(*r) + ".png")));
    }

    // deterministic rasters, and PNG sidecars on request
    const fs::path out2 = fresh_out("pred_png");
    run_inference(res.best_checkpoint, cfg.backbone, m, "test", Domain::target, out2, true);
    for (const auto* r : test_frames) {
        CHECK(file_bytes(out / (frame_id(*r) + ".f32")) ==
              file_bytes(out2 / (frame_id(*r) + ".f32")));
        CHECK(fs::exists(out2 / (frame_id(*r) + ".png")));
    }
}
