#include "xdseg/evaluate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "xdseg/errors.hpp"

namespace fs = std::filesystem;

namespace xdseg {

namespace {

std::size_t count_fg(const Image& m) {
    std::size_t n = 0;
    for (float v : m.pixels) n += v >= 0.5f;
    return n;
}

std::size_t count_inter(const Image& a, const Image& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        n += (a.pixels[i] >= 0.5f) && (b.pixels[i] >= 0.5f);
    return n;
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (a.h != b.h || a.w != b.w)
        throw InvalidInput(std::string(what) + ": mask shapes differ (" + std::to_string(a.h) +
                           "x" + std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                           std::to_string(b.w) + ")");
}

}  // namespace

double dsc(const Image& pred, const Image& gt) {
    require_same_shape(pred, gt, "dsc");
    const std::size_t a = count_fg(pred), b = count_fg(gt);
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(count_inter(pred, gt)) / static_cast<double>(a + b);
}

double iou(const Image& pred, const Image& gt) {
    require_same_shape(pred, gt, "iou");
    const std::size_t a = count_fg(pred), b = count_fg(gt);
    const std::size_t inter = count_inter(pred, gt);
    const std::size_t uni = a + b - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

const char* to_string(TestMethod m) {
    return m == TestMethod::exact ? "exact" : "normal_approx";
}

PairedTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidInput("wilcoxon: sample lengths differ");
    if (a.empty()) throw InvalidInput("wilcoxon: empty samples");

    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);

    PairedTestResult r;
    r.n_effective = d.size();
    if (d.empty()) {
        r.degenerate = true;
        return r;
    }

    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });

    // Average ranks within runs of equal |d|; doubled ranks stay integral.
    std::vector<double> rank(n, 0.0);
    std::vector<std::size_t> tie_sizes;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
        tie_sizes.push_back(j - i);
        i = j;
    }

    double w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0.0) w_plus += rank[i];
    r.statistic = w_plus;

    if (n <= 25) {
        r.method = TestMethod::exact;
        // Null distribution of W+ over all 2^n sign assignments, on doubled
        // ranks so tied (half-integer) ranks stay exact integers.
        const std::size_t smax = n * (n + 1);  // doubled rank total
        std::vector<double> ways(smax + 1, 0.0);
        ways[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t dr = static_cast<std::size_t>(std::llround(2.0 * rank[i]));
            for (std::size_t s = smax; s >= dr; --s) ways[s] += ways[s - dr];
        }
        const double total = std::ldexp(1.0, static_cast<int>(n));
        const std::size_t w2 = static_cast<std::size_t>(std::llround(2.0 * w_plus));
        double below = 0.0, above = 0.0;
        for (std::size_t s = 0; s <= smax; ++s) {
            if (s <= w2) below += ways[s];
            if (s >= w2) above += ways[s];
        }
        r.p_value = std::min(1.0, 2.0 * std::min(below, above) / total);
        return r;
    }

    r.method = TestMethod::normal_approx;
    const double dn = static_cast<double>(n);
    const double mu = dn * (dn + 1.0) / 4.0;
    double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0;
    for (std::size_t t : tie_sizes) {
        const double dt = static_cast<double>(t);
        var -= (dt * dt * dt - dt) / 48.0;
    }
    if (!(var > 0.0)) {
        r.p_value = 1.0;
        return r;
    }
    const double delta = std::max(0.0, std::abs(w_plus - mu) - 0.5);  // continuity correction
    const double z = delta / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    return r;
}

std::string frame_id(const FrameRecord& r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_f%03u", r.frame_index);
    return r.video_id + buf;
}

namespace {

Image binarize(const Image& m) {
    Image out(m.h, m.w);
    for (std::size_t i = 0; i < m.pixels.size(); ++i)
        out.pixels[i] = m.pixels[i] >= 0.5f ? 1.0f : 0.0f;
    return out;
}

}  // namespace

RunEvaluation evaluate_run(const std::string& run_name, const Manifest& m,
                           const std::string& split, Domain domain,
                           const std::filesystem::path& pred_dir, double threshold) {
    RunEvaluation ev;
    ev.run_name = run_name;

    struct Item {
        const FrameRecord* rec;
        std::string pred_path;
    };
    std::vector<Item> items;
    std::vector<std::string> missing;
    for (const FrameRecord* r : m.frames(split, domain)) {
        if (!r->mask_path) continue;  // only human-annotated frames are scored
        const std::string id = frame_id(*r);
        const fs::path raster = pred_dir / (id + ".f32");
        const fs::path png = pred_dir / (id + ".png");
        if (fs::exists(raster))
            items.push_back({r, raster.string()});
        else if (fs::exists(png))
            items.push_back({r, png.string()});
        else
            missing.push_back(id);
    }
    if (!missing.empty()) {
        std::string msg = "evaluate: missing predictions under " + pred_dir.string() + " for:";
        for (const std::string& id : missing) msg += " " + id;
        throw DataError(msg);
    }
    if (items.empty())
        throw DataError("evaluate: split '" + split + "' has no annotated " + to_string(domain) +
                        " frames");

    double sum_dsc = 0.0, sum_iou = 0.0;
    for (const Item& it : items) {
        const Image gt = binarize(load_png(m.resolve(*it.rec->mask_path)));
        Image prob = load_probability_map(it.pred_path);
        if (prob.h != gt.h || prob.w != gt.w) prob = resize_bilinear(prob, gt.h, gt.w);
        Image pred(prob.h, prob.w);
        for (std::size_t i = 0; i < prob.pixels.size(); ++i)
            pred.pixels[i] = prob.pixels[i] >= static_cast<float>(threshold) ? 1.0f : 0.0f;

        ImageScore s;
        s.image_id = frame_id(*it.rec);
        s.video_id = it.rec->video_id;
        s.patient_id = it.rec->patient_id;
        s.dsc = dsc(pred, gt);
        s.iou = iou(pred, gt);
        sum_dsc += s.dsc;
        sum_iou += s.iou;
        ev.scores.push_back(std::move(s));
    }
    ev.mean_dsc = sum_dsc / static_cast<double>(ev.scores.size());
    ev.mean_iou = sum_iou / static_cast<double>(ev.scores.size());
    return ev;
}

void write_scores_csv(const std::filesystem::path& path, const RunEvaluation& eval) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "image_id,video_id,patient_id,dsc,iou\n";
    char buf[64];
    for (const ImageScore& s : eval.scores) {
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", s.dsc, s.iou);
        out << s.image_id << ',' << s.video_id << ',' << s.patient_id << buf;
    }
    if (!out) throw DataError("short write to " + path.string());
}

RunEvaluation read_scores_csv(const std::filesystem::path& path, const std::string& run_name) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "image_id,video_id,patient_id,dsc,iou")
        throw DataError(path.string() + ": unrecognized scores header");
    RunEvaluation ev;
    ev.run_name = run_name;
    double sum_dsc = 0.0, sum_iou = 0.0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::array<std::string, 5> field;
        std::size_t start = 0, idx = 0;
        for (; idx < 4; ++idx) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos)
                throw DataError(path.string() + ":" + std::to_string(line_no) +
                                ": expected 5 comma-separated fields");
            field[idx] = line.substr(start, comma - start);
            start = comma + 1;
        }
        field[4] = line.substr(start);
        ImageScore s;
        s.image_id = field[0];
        s.video_id = field[1];
        s.patient_id = field[2];
        try {
            s.dsc = std::stod(field[3]);
            s.iou = std::stod(field[4]);
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad score value");
        }
        sum_dsc += s.dsc;
        sum_iou += s.iou;
        ev.scores.push_back(std::move(s));
    }
    if (!ev.scores.empty()) {
        ev.mean_dsc = sum_dsc / static_cast<double>(ev.scores.size());
        ev.mean_iou = sum_iou / static_cast<double>(ev.scores.size());
    }
    return ev;
}

void emit_report(const std::vector<RunEvaluation>& runs, const std::filesystem::path& json_path) {
    nlohmann::json j;
    j["runs"] = nlohmann::json::array();
    for (const RunEvaluation& r : runs)
        j["runs"].push_back({{"name", r.run_name},
                             {"n_images", r.scores.size()},
                             {"mean_dsc", r.mean_dsc},
                             {"mean_iou", r.mean_iou}});

    j["pairwise"] = nlohmann::json::array();
    for (std::size_t i = 0; i < runs.size(); ++i)
        for (std::size_t k = i + 1; k < runs.size(); ++k) {
            for (const char* metric : {"dsc", "iou"}) {
                std::vector<double> a, b;
                for (const ImageScore& s : runs[i].scores)
                    a.push_back(metric == std::string("dsc") ? s.dsc : s.iou);
                for (const ImageScore& s : runs[k].scores)
                    b.push_back(metric == std::string("dsc") ? s.dsc : s.iou);
                if (a.size() != b.size()) continue;  // different test sets: no pairing
                const PairedTestResult t = wilcoxon_signed_rank(a, b);
                j["pairwise"].push_back({{"a", runs[i].run_name},
                                         {"b", runs[k].run_name},
                                         {"metric", metric},
                                         {"n_effective", t.n_effective},
                                         {"statistic", t.statistic},
                                         {"p_value", t.p_value},
                                         {"method", to_string(t.method)},
                                         {"degenerate", t.degenerate}});
            }
        }

    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + json_path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("short write to " + json_path.string());
}

void write_overlay_png(const std::filesystem::path& path, const Image& base, const Image& gt,
                       const Image& pred) {
    require_same_shape(base, gt, "overlay");
    require_same_shape(base, pred, "overlay");

    auto is_contour = [](const Image& m, std::size_t y, std::size_t x) {
        if (m.at(y, x) < 0.5f) return false;
        if (y == 0 || x == 0 || y + 1 == m.h || x + 1 == m.w) return true;
        return m.at(y - 1, x) < 0.5f || m.at(y + 1, x) < 0.5f || m.at(y, x - 1) < 0.5f ||
               m.at(y, x + 1) < 0.5f;
    };

    std::vector<std::uint8_t> rgb(base.h * base.w * 3);
    for (std::size_t y = 0; y < base.h; ++y)
        for (std::size_t x = 0; x < base.w; ++x) {
            const std::uint8_t g8 = quantize8(base.at(y, x));
            std::uint8_t* px = &rgb[(y * base.w + x) * 3];
            px[0] = px[1] = px[2] = g8;
            const bool on_gt = is_contour(gt, y, x);
            const bool on_pred = is_contour(pred, y, x);
            if (on_gt || on_pred) {
                px[0] = on_pred ? 255 : 0;
                px[1] = on_gt ? 255 : 0;
                px[2] = 0;
            }
        }
    save_png_rgb(path.string(), base.h, base.w, rgb);
}

}  // namespace xdseg
