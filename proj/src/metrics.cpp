#include "fcad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace fcad {

namespace {

void check_two_classes(const std::vector<int>& labels, const char* who) {
    bool pos = false, neg = false;
    for (int l : labels) {
        if (l == 1) pos = true;
        else if (l == 0) neg = true;
        else throw MetricError(std::string(who) + ": labels must be 0 or 1");
    }
    if (!pos || !neg) throw MetricError(std::string(who) + ": both classes must be present");
}

double rank_auroc(const std::vector<double>& scores, const std::vector<int>& labels,
                  const char* who) {
    if (scores.size() != labels.size() || scores.empty())
        throw MetricError(std::string(who) + ": scores and labels must align and be non-empty");
    check_two_classes(labels, who);
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    size_t n_pos = 0;
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) {
                pos_rank_sum += mid_rank;
                ++n_pos;
            }
        i = j;
    }
    const size_t n_neg = scores.size() - n_pos;
    return (pos_rank_sum - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return rank_auroc(scores, labels, "auroc");
}

double pixel_auroc(const std::vector<Tensor>& score_maps, const std::vector<Tensor>& gt_masks) {
    if (score_maps.size() != gt_masks.size() || score_maps.empty())
        throw MetricError("pixel_auroc: need aligned, non-empty maps and masks");
    std::vector<double> pooled;
    std::vector<int> labels;
    for (size_t i = 0; i < score_maps.size(); ++i) {
        check_shape(score_maps[i].shape == gt_masks[i].shape,
                    "pixel_auroc: map/mask shape mismatch at image " + std::to_string(i));
        for (size_t p = 0; p < score_maps[i].numel(); ++p) {
            pooled.push_back(score_maps[i].v[p]);
            labels.push_back(gt_masks[i].v[p] > 0.5f ? 1 : 0);
        }
    }
    return rank_auroc(pooled, labels, "pixel_auroc");
}

std::vector<int> connected_components(const std::vector<uint8_t>& mask, int h, int w,
                                      int* n_components) {
    check_shape(static_cast<size_t>(h) * w == mask.size(),
                "connected_components: mask size does not match h*w");
    std::vector<int> label(mask.size(), -1);
    std::vector<int> stack;
    int next = 0;
    for (int start = 0; start < h * w; ++start) {
        if (!mask[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0) continue;
        stack.push_back(start);
        label[static_cast<size_t>(start)] = next;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / w, x = p % w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
                    const int q = ny * w + nx;
                    if (!mask[static_cast<size_t>(q)] || label[static_cast<size_t>(q)] >= 0)
                        continue;
                    label[static_cast<size_t>(q)] = next;
                    stack.push_back(q);
                }
        }
        ++next;
    }
    if (n_components) *n_components = next;
    return label;
}

double aupro(const std::vector<Tensor>& score_maps, const std::vector<Tensor>& gt_masks,
             double fpr_limit, int max_thresholds) {
    if (!(fpr_limit > 0.0 && fpr_limit <= 1.0))
        throw MetricError("aupro: fpr_limit must lie in (0, 1]");
    if (score_maps.size() != gt_masks.size() || score_maps.empty())
        throw MetricError("aupro: need aligned, non-empty maps and masks");
    check_config(max_thresholds >= 2, "aupro: max_thresholds must be at least 2");

    // Pool every pixel with its region id (-1 for normal pixels).
    struct Pixel {
        float score;
        int region;
    };
    std::vector<Pixel> pixels;
    std::vector<size_t> region_size;
    size_t total_neg = 0;
    for (size_t i = 0; i < score_maps.size(); ++i) {
        const Tensor& m = score_maps[i];
        const Tensor& g = gt_masks[i];
        check_shape(m.shape == g.shape && m.rank() == 2,
                    "aupro: map/mask must be matching (H, W) at image " + std::to_string(i));
        const int h = m.dim(0), w = m.dim(1);
        std::vector<uint8_t> bin(m.numel());
        for (size_t p = 0; p < g.numel(); ++p) bin[p] = g.v[p] > 0.5f ? 1 : 0;
        int nc = 0;
        auto labels = connected_components(bin, h, w, &nc);
        const int base = static_cast<int>(region_size.size());
        region_size.resize(static_cast<size_t>(base + nc), 0);
        for (size_t p = 0; p < m.numel(); ++p) {
            const int region = labels[p] >= 0 ? base + labels[p] : -1;
            pixels.push_back({m.v[p], region});
            if (region >= 0)
                ++region_size[static_cast<size_t>(region)];
            else
                ++total_neg;
        }
    }
    if (region_size.empty()) throw MetricError("aupro: no anomalous pixels in any mask");
    if (total_neg == 0) throw MetricError("aupro: no normal pixels to measure FPR on");

    std::sort(pixels.begin(), pixels.end(),
              [](const Pixel& a, const Pixel& b) { return a.score > b.score; });
    std::vector<float> uniq;
    uniq.reserve(pixels.size());
    for (const Pixel& p : pixels)
        if (uniq.empty() || p.score != uniq.back()) uniq.push_back(p.score);

    // Threshold set: every distinct value, or rank-spaced quantiles of them.
    std::vector<float> thresholds;
    if (uniq.size() <= static_cast<size_t>(max_thresholds)) {
        thresholds = uniq;
    } else {
        thresholds.reserve(static_cast<size_t>(max_thresholds));
        for (int i = 0; i < max_thresholds; ++i) {
            const size_t idx = static_cast<size_t>(
                (static_cast<double>(i) / (max_thresholds - 1)) * (uniq.size() - 1));
            thresholds.push_back(uniq[idx]);
        }
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    }

    // Descending sweep; prediction at threshold t is score >= t, so pixels
    // join the positive set incrementally.
    std::vector<size_t> hits(region_size.size(), 0);
    size_t fp = 0, cursor = 0;
    std::vector<std::pair<double, double>> curve;  // (fpr, pro)
    curve.emplace_back(0.0, 0.0);
    for (float t : thresholds) {
        while (cursor < pixels.size() && pixels[cursor].score >= t) {
            if (pixels[cursor].region >= 0)
                ++hits[static_cast<size_t>(pixels[cursor].region)];
            else
                ++fp;
            ++cursor;
        }
        double pro = 0.0;
        for (size_t r = 0; r < hits.size(); ++r)
            pro += static_cast<double>(hits[r]) / static_cast<double>(region_size[r]);
        pro /= static_cast<double>(hits.size());
        curve.emplace_back(static_cast<double>(fp) / static_cast<double>(total_neg), pro);
    }
    if (curve.back().first < 1.0) curve.emplace_back(1.0, curve.back().second);

    double area = 0.0;
    for (size_t i = 1; i < curve.size(); ++i) {
        double x0 = curve[i - 1].first, y0 = curve[i - 1].second;
        double x1 = curve[i].first, y1 = curve[i].second;
        if (x0 >= fpr_limit) break;
        if (x1 > fpr_limit) {
            const double wgt = (fpr_limit - x0) / (x1 - x0);
            x1 = fpr_limit;
            y1 = y0 + wgt * (y1 - y0);
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    return area / fpr_limit;
}

F1Result f1_acc_at_optimal_f1(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw MetricError("f1_acc_at_optimal_f1: scores and labels must align");
    check_two_classes(labels, "f1_acc_at_optimal_f1");

    std::vector<double> pos, neg;
    for (size_t i = 0; i < scores.size(); ++i)
        (labels[i] == 1 ? pos : neg).push_back(scores[i]);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());

    std::vector<double> uniq(scores);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<double> cands;
    cands.push_back(uniq.front() - 1.0);
    for (size_t i = 0; i + 1 < uniq.size(); ++i) cands.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    cands.push_back(uniq.back() + 1.0);

    const double n = static_cast<double>(scores.size());
    F1Result best{-1.0, 0.0, 0.0};
    for (double t : cands) {
        // predictions are score >= t; count via binary search
        const auto tp = static_cast<double>(pos.end() -
                                            std::lower_bound(pos.begin(), pos.end(), t));
        const auto fp = static_cast<double>(neg.end() -
                                            std::lower_bound(neg.begin(), neg.end(), t));
        const double fn = static_cast<double>(pos.size()) - tp;
        const double tn = static_cast<double>(neg.size()) - fp;
        const double denom = 2.0 * tp + fp + fn;
        const double f1 = denom > 0.0 ? 2.0 * tp / denom : 0.0;
        const double acc = (tp + tn) / n;
        if (f1 > best.f1 || (f1 == best.f1 && (acc > best.acc ||
                                               (acc == best.acc && t < best.threshold)))) {
            best = {f1, acc, t};
        }
    }
    return best;
}

namespace {

MetricSet metric_row(const std::vector<double>& scores, const std::vector<int>& labels,
                     const std::vector<Tensor>& maps, const std::vector<Tensor>& masks) {
    MetricSet row;
    row.n_images = static_cast<int>(scores.size());
    row.i_auroc = auroc(scores, labels);
    const F1Result f1 = f1_acc_at_optimal_f1(scores, labels);
    row.f1 = f1.f1;
    row.acc = f1.acc;
    row.threshold_f1 = f1.threshold;
    if (!masks.empty()) {
        bool any_pos = false, any_neg = false;
        for (const Tensor& m : masks)
            for (float v : m.v) (v > 0.5f ? any_pos : any_neg) = true;
        if (any_pos && any_neg) {
            row.p_auroc = pixel_auroc(maps, masks);
            row.aupro = aupro(maps, masks);
        }
    }
    return row;
}

}  // namespace

EvalReport compute_eval_report(const std::vector<double>& scores,
                               const std::vector<int>& labels,
                               const std::vector<std::string>& categories,
                               const std::vector<Tensor>& score_maps,
                               const std::vector<Tensor>& gt_masks) {
    check_config(scores.size() == labels.size(), "compute_eval_report: scores/labels mismatch");
    check_config(categories.empty() || categories.size() == scores.size(),
                 "compute_eval_report: categories must be empty or align with scores");
    check_config(score_maps.size() == gt_masks.size(),
                 "compute_eval_report: maps/masks mismatch");
    check_config(score_maps.empty() || score_maps.size() == scores.size(),
                 "compute_eval_report: maps must be empty or align with scores");

    EvalReport report;
    report.overall = metric_row(scores, labels, score_maps, gt_masks);

    std::map<std::string, std::vector<size_t>> by_cat;
    for (size_t i = 0; i < categories.size(); ++i) by_cat[categories[i]].push_back(i);
    if (by_cat.size() > 1) {
        for (const auto& [cat, idx] : by_cat) {
            std::vector<double> s;
            std::vector<int> l;
            std::vector<Tensor> m, g;
            bool pos = false, neg = false;
            for (size_t i : idx) {
                s.push_back(scores[i]);
                l.push_back(labels[i]);
                if (!score_maps.empty()) {
                    m.push_back(score_maps[i]);
                    g.push_back(gt_masks[i]);
                }
                (labels[i] == 1 ? pos : neg) = true;
            }
            if (pos && neg) report.per_category[cat] = metric_row(s, l, m, g);
        }
    }
    return report;
}

namespace {

nlohmann::json row_json(const MetricSet& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return nlohmann::json{
        {"i_auroc", r.i_auroc}, {"p_auroc", opt(r.p_auroc)}, {"aupro", opt(r.aupro)},
        {"f1", opt(r.f1)},      {"acc", opt(r.acc)},         {"threshold_f1", r.threshold_f1},
        {"n_images", r.n_images},
    };
}

void csv_row(std::ostringstream& os, const std::string& name, const MetricSet& r) {
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
    os << name << "," << r.n_images << "," << num(r.i_auroc) << "," << opt(r.p_auroc) << ","
       << opt(r.aupro) << "," << opt(r.f1) << "," << opt(r.acc) << "," << num(r.threshold_f1)
       << "\n";
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["overall"] = row_json(report.overall);
    j["per_category"] = nlohmann::json::object();
    for (const auto& [cat, row] : report.per_category) j["per_category"][cat] = row_json(row);
    return j.dump(2) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "category,n_images,i_auroc,p_auroc,aupro,f1,acc,threshold_f1\n";
    csv_row(os, "overall", report.overall);
    for (const auto& [cat, row] : report.per_category) csv_row(os, cat, row);
    return os.str();
}

}  // namespace fcad
