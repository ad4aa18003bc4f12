#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "oracles.hpp"
#include "xdseg/errors.hpp"
#include "xdseg/evaluate.hpp"
#include "xdseg/image.hpp"
#include "xdseg/manifest.hpp"
#include "xdseg/phantom.hpp"
#include "xdseg/rng.hpp"

using namespace xdseg;
namespace fs = std::filesystem;

namespace {

Image random_mask(Rng& rng, std::size_t h, std::size_t w, double fg = 0.5) {
    Image m(h, w);
    for (float& v : m.pixels) v = rng.bernoulli(fg) ? 1.0f : 0.0f;
    return m;
}

std::vector<bool> to_bools(const Image& m) {
    std::vector<bool> b(m.pixels.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = m.pixels[i] >= 0.5f;
    return b;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("xdseg_eval_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("DSC and IoU match the scalar oracles and each other") {
    Rng rng(401);
    for (int it = 0; it < 300; ++it) {
        const Image a = random_mask(rng, 8, 8, rng.uniform(0.1, 0.9));
        const Image b = random_mask(rng, 8, 8, rng.uniform(0.1, 0.9));
        const double d = dsc(a, b);
        const double i = iou(a, b);
        CHECK(d == doctest::Approx(oracle::dsc(to_bools(a), to_bools(b))).epsilon(1e-12));
        CHECK(i == doctest::Approx(oracle::iou(to_bools(a), to_bools(b))).epsilon(1e-12));
        // identity between the two overlap metrics
        CHECK(i == doctest::Approx(d / (2.0 - d)).epsilon(1e-12));
    }
}

TEST_CASE("metric hand cases") {
    Image full(2, 2, 1.0f), empty(2, 2, 0.0f);
    CHECK(dsc(full, full) == 1.0);
    CHECK(iou(full, full) == 1.0);
    CHECK(dsc(empty, empty) == 1.0);  // both empty: correct empty prediction
    CHECK(iou(empty, empty) == 1.0);
    CHECK(dsc(full, empty) == 0.0);
    CHECK(iou(full, empty) == 0.0);

    // two-of-four overlap: |A| = |B| = 4, |A∩B| = 2 -> DSC 0.5, IoU 1/3
    Image a(2, 4, 0.0f), b(2, 4, 0.0f);
    a.pixels = {1, 1, 1, 1, 0, 0, 0, 0};
    b.pixels = {1, 1, 0, 0, 1, 1, 0, 0};
    CHECK(dsc(a, b) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("half-open pixels: >= 0.5 counts as foreground") {
    Image a(1, 2), b(1, 2, 1.0f);
    a.pixels = {0.5f, 0.49f};
    CHECK(dsc(a, b) == doctest::Approx(2.0 * 1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("Wilcoxon exact p equals full sign enumeration") {
    Rng rng(402);
    int checked = 0;
    while (checked < 100) {
        const std::size_t n = 2 + rng.uniform_index(11);  // up to 12 pairs
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform();
            // ties and zero differences on purpose
            b[i] = rng.bernoulli(0.2) ? a[i] : rng.uniform();
            if (rng.bernoulli(0.3)) b[i] = a[i] + (rng.bernoulli(0.5) ? 0.25 : -0.25);
        }
        std::vector<double> diffs(n);
        for (std::size_t i = 0; i < n; ++i) diffs[i] = a[i] - b[i];
        const PairedTestResult r = wilcoxon_signed_rank(a, b);
        if (r.method != TestMethod::exact) continue;
        const double want = oracle::wilcoxon_exact_p(diffs);
        CHECK(r.p_value == doctest::Approx(want).epsilon(1e-12));
        ++checked;
    }
}

TEST_CASE("Wilcoxon hand case: five positive differences give p = 0.0625") {
    const std::vector<double> a = {1.0, 2.0, 3.0, 4.0, 5.0};
    const std::vector<double> b = {0.5, 1.0, 2.0, 3.0, 4.0};
    const PairedTestResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.n_effective == 5);
    CHECK(r.method == TestMethod::exact);
    CHECK(r.statistic == doctest::Approx(15.0));
    CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-12));
    CHECK_FALSE(r.degenerate);
}

TEST_CASE("Wilcoxon degenerate and large-sample behavior") {
    const std::vector<double> same = {1.0, 2.0, 3.0};
    const PairedTestResult r = wilcoxon_signed_rank(same, same);
    CHECK(r.degenerate);
    CHECK(r.p_value == 1.0);
    CHECK(r.n_effective == 0);

    // n > 25 switches to the normal approximation; a clearly one-sided
    // sample must give a tiny p either way.
    Rng rng(403);
    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < 40; ++i) {
        a[i] = rng.uniform() + 1.0;
        b[i] = rng.uniform();
    }
    const PairedTestResult big = wilcoxon_signed_rank(a, b);
    CHECK(big.method == TestMethod::normal_approx);
    CHECK(big.n_effective == 40);
    CHECK(big.p_value < 1e-6);
    CHECK(big.p_value > 0.0);
}

TEST_CASE("normal approximation is close to exact near the cutover") {
    // n = 25 runs exactly; the same data pushed through the approximation
    // (via n = 26 with one extra tie-broken pair) should land nearby. Here we
    // simply check continuity of p across the boundary on smooth data.
    Rng rng(404);
    std::vector<double> a25(25), b25(25), a26(26), b26(26);
    for (std::size_t i = 0; i < 25; ++i) {
        a25[i] = a26[i] = rng.normal();
        b25[i] = b26[i] = a25[i] + rng.normal(0.35, 1.0);
    }
    a26[25] = 0.1;
    b26[25] = 0.1;  // zero difference: dropped, so both n_effective are 25
    const PairedTestResult exact = wilcoxon_signed_rank(a25, b25);
    const PairedTestResult same = wilcoxon_signed_rank(a26, b26);
    CHECK(exact.method == TestMethod::exact);
    CHECK(same.method == TestMethod::exact);
    CHECK(same.n_effective == 25);
    CHECK(same.p_value == doctest::Approx(exact.p_value).epsilon(1e-12));
}

TEST_CASE("frame ids are stable and zero-padded") {
    FrameRecord r;
    r.video_id = "tgtP03v1";
    r.frame_index = 7;
    CHECK(frame_id(r) == "tgtP03v1_f007");
    r.frame_index = 123;
    CHECK(frame_id(r) == "tgtP03v1_f123");
}

TEST_CASE("evaluate_run scores rasters against ground truth") {
    const fs::path root = fresh_dir("run");
    PhantomConfig cfg = PhantomConfig::profile_a(11);
    cfg.num_patients = 2;
    cfg.frames_per_video = 3;
    Manifest m = generate_phantom(cfg, root.string());
    for (const std::string& pid : m.patient_ids()) m.split_assignment[pid] = "test";

    // Perfect predictions from the ground-truth masks themselves.
    const fs::path pred = root / "pred";
    fs::create_directories(pred);
    for (const FrameRecord& r : m.records) {
        const Image gt = load_png(m.resolve(*r.mask_path));
        save_raster((pred / (frame_id(r) + ".f32")).string(), gt);
    }
    const RunEvaluation ev = evaluate_run("perfect", m, "test", Domain::source, pred);
    CHECK(ev.scores.size() == m.records.size());
    CHECK(ev.mean_dsc == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ev.mean_iou == doctest::Approx(1.0).epsilon(1e-9));

    // Remove one raster: the error must name the frame.
    const std::string victim = frame_id(m.records[1]);
    fs::remove(pred / (victim + ".f32"));
    CHECK_THROWS_WITH_AS(
        (void)evaluate_run("broken", m, "test", Domain::source, pred),
        doctest::Contains(victim.c_str()), DataError);
}

TEST_CASE("scores CSV round-trips through the reader") {
    RunEvaluation ev;
    ev.run_name = "roundtrip";
    ev.scores = {{"vidA_f000", "vidA", "p0", 0.8125, 0.684211},
                 {"vidA_f001", "vidA", "p0", 1.0, 1.0},
                 {"vidB_f000", "vidB", "p1", 0.0, 0.0}};
    ev.mean_dsc = (0.8125 + 1.0 + 0.0) / 3.0;
    ev.mean_iou = (0.684211 + 1.0 + 0.0) / 3.0;
    const fs::path path = fresh_dir("csv") / "scores.csv";
    write_scores_csv(path, ev);
    const RunEvaluation back = read_scores_csv(path, "roundtrip");
    REQUIRE(back.scores.size() == ev.scores.size());
    for (std::size_t i = 0; i < ev.scores.size(); ++i) {
        CHECK(back.scores[i].image_id == ev.scores[i].image_id);
        CHECK(back.scores[i].video_id == ev.scores[i].video_id);
        CHECK(back.scores[i].patient_id == ev.scores[i].patient_id);
        CHECK(back.scores[i].dsc == doctest::Approx(ev.scores[i].dsc).epsilon(1e-6));
        CHECK(back.scores[i].iou == doctest::Approx(ev.scores[i].iou).epsilon(1e-6));
    }
    CHECK(back.mean_dsc == doctest::Approx(ev.mean_dsc).epsilon(1e-6));
}

TEST_CASE("report JSON is deterministic and carries paired tests") {
    Rng rng(405);
    auto make_eval = [&](const std::string& name, double shift) {
        RunEvaluation ev;
        ev.run_name = name;
        double sum_d = 0.0, sum_i = 0.0;
        for (int i = 0; i < 12; ++i) {
            ImageScore s;
            s.image_id = "v_f" + std::to_string(i);
            s.video_id = "v";
            s.patient_id = "p" + std::to_string(i / 4);
            s.dsc = std::clamp(0.5 + shift + 0.1 * rng.normal(), 0.0, 1.0);
            s.iou = s.dsc / (2.0 - s.dsc);
            sum_d += s.dsc;
            sum_i += s.iou;
            ev.scores.push_back(s);
        }
        ev.mean_dsc = sum_d / 12.0;
        ev.mean_iou = sum_i / 12.0;
        return ev;
    };
    const std::vector<RunEvaluation> runs = {make_eval("low", 0.0), make_eval("high", 0.3)};
    const fs::path dir = fresh_dir("report");
    emit_report(runs, dir / "a.json");
    emit_report(runs, dir / "b.json");

    std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
    const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
    CHECK(sa.find("\"runs\"") != std::string::npos);
    CHECK(sa.find("\"pairwise\"") != std::string::npos);
    CHECK(sa.find("\"p_value\"") != std::string::npos);
    CHECK(sa.find("low") != std::string::npos);
    CHECK(sa.find("high") != std::string::npos);
}

TEST_CASE("overlay PNG writes contours in the expected colors") {
    const fs::path dir = fresh_dir("overlay");
    Image base(8, 8, 0.5f);
    Image gt(8, 8, 0.0f), pred(8, 8, 0.0f);
    for (std::size_t y = 2; y < 6; ++y)
        for (std::size_t x = 2; x < 6; ++x) gt.at(y, x) = 1.0f;
    for (std::size_t y = 3; y < 7; ++y)
        for (std::size_t x = 3; x < 7; ++x) pred.at(y, x) = 1.0f;
    const fs::path p = dir / "overlay.png";
    write_overlay_png(p, base, gt, pred);
    CHECK(fs::exists(p));
    CHECK(fs::file_size(p) > 0);
}
