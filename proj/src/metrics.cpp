#include "clifgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "clifgan/log.hpp"

namespace clifgan::metrics {

using nlohmann::json;

void ConfusionMatrix::add(const DamageMask& pred, const DamageMask& truth) {
    if (pred.size() != truth.size()) throw Error("metrics: prediction and truth sizes differ");
    const auto& p = pred.cells();
    const auto& t = truth.cells();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == label::ignore) continue;
        if (t[i] >= K) throw Error("metrics: truth label outside legend");
        const int pv = p[i] < K ? p[i] : 0;
        ++counts[t[i]][pv];
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (int r = 0; r < K; ++r)
        for (int c = 0; c < K; ++c) counts[r][c] += other.counts[r][c];
    return *this;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
        for (auto v : row) n += v;
    return n;
}

ConfusionMatrix confusion(const DamageMask& pred, const DamageMask& truth) {
    ConfusionMatrix cm;
    cm.add(pred, truth);
    return cm;
}

double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    if (tp == 0 && fp == 0 && fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double seg_f1(const ConfusionMatrix& cm) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (int t = 0; t < ConfusionMatrix::K; ++t)
        for (int p = 0; p < ConfusionMatrix::K; ++p) {
            const bool tb = t >= 1, pb = p >= 1;
            if (tb && pb) tp += cm.counts[t][p];
            else if (!tb && pb) fp += cm.counts[t][p];
            else if (tb && !pb) fn += cm.counts[t][p];
        }
    return f1_from_counts(tp, fp, fn);
}

double seg_f1(const DamageMask& pred, const DamageMask& truth) { return seg_f1(confusion(pred, truth)); }

ClassificationScore cls_f1(const ConfusionMatrix& cm) {
    ClassificationScore score;
    std::uint64_t building_pixels = 0;
    for (int t = 1; t < ConfusionMatrix::K; ++t)
        for (int p = 0; p < ConfusionMatrix::K; ++p) building_pixels += cm.counts[t][p];
    if (building_pixels == 0) {
        log::warn("cls_f1: no truth building pixels; classification F1 undefined");
        return score;
    }
    double inv_sum = 0;
    int included = 0;
    bool any_zero = false;
    for (int c = 1; c < ConfusionMatrix::K; ++c) {
        std::uint64_t tp = cm.counts[c][c], fp = 0, fn = 0;
        for (int t = 1; t < ConfusionMatrix::K; ++t)
            if (t != c) fp += cm.counts[t][c];
        for (int p = 0; p < ConfusionMatrix::K; ++p)
            if (p != c) fn += cm.counts[c][p];
        if (tp + fp + fn == 0) continue;  // absent from both
        const double f = f1_from_counts(tp, fp, fn);
        score.per_class[c - 1] = f;
        ++included;
        if (f == 0.0) any_zero = true;
        else inv_sum += 1.0 / f;
    }
    score.overall = any_zero ? 0.0 : static_cast<double>(included) / inv_sum;
    return score;
}

ClassificationScore cls_f1(const DamageMask& pred, const DamageMask& truth) { return cls_f1(confusion(pred, truth)); }

namespace {
json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}
}  // namespace

void to_json(json& j, const EvalReport& r) {
    j = json{{"segmentation_f1", r.segmentation_f1},
             {"classification_f1", optional_json(r.classification_f1)},
             {"per_class_f1", json::array()},
             {"model_size_bytes", r.model_size_bytes},
             {"train_time_seconds", r.train_time_seconds},
             {"dataset_tag", r.dataset_tag},
             {"method_tag", r.method_tag},
             {"notes", r.notes},
             {"confusion", r.confusion.counts}};
    for (const auto& v : r.per_class_f1) j["per_class_f1"].push_back(optional_json(v));
}

void from_json(const json& j, EvalReport& r) {
    r.segmentation_f1 = j.at("segmentation_f1").get<double>();
    r.classification_f1 = optional_from(j.at("classification_f1"));
    const auto& pc = j.at("per_class_f1");
    for (std::size_t i = 0; i < 4 && i < pc.size(); ++i) r.per_class_f1[i] = optional_from(pc[i]);
    r.model_size_bytes = j.value("model_size_bytes", std::uint64_t{0});
    r.train_time_seconds = j.value("train_time_seconds", 0.0);
    r.dataset_tag = j.value("dataset_tag", "");
    r.method_tag = j.value("method_tag", "");
    r.notes = j.value("notes", "");
    if (j.contains("confusion")) r.confusion.counts = j.at("confusion").get<decltype(r.confusion.counts)>();
}

std::string to_string(Aggregation a) { return a == Aggregation::micro ? "micro" : "macro"; }

Aggregation aggregation_from_string(const std::string& s) {
    if (s == "micro") return Aggregation::micro;
    if (s == "macro") return Aggregation::macro;
    throw ConfigError("unknown metric aggregation '" + s + "'");
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

EvalReport evaluate(const DamagePredictor& predict, const data::DatasetManifest& test, std::uint64_t model_size_bytes,
                    double train_time_seconds, std::string method_tag, std::string dataset_tag, Aggregation aggregation) {
    if (test.empty()) throw Error("evaluate: test manifest is empty");
    EvalReport r;
    std::vector<ConfusionMatrix> tiles;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto s = test.load(i);
        tiles.push_back(confusion(predict(*s), s->post_mask));
        r.confusion += tiles.back();
    }
    if (aggregation == Aggregation::micro) {
        r.segmentation_f1 = seg_f1(r.confusion);
        const auto cls = cls_f1(r.confusion);
        r.classification_f1 = cls.overall;
        r.per_class_f1 = cls.per_class;
        r.notes = "pixel-level F1, micro-aggregated over tiles";
    } else {
        std::vector<double> seg, overall;
        std::array<std::vector<double>, 4> per_class;
        for (const auto& cm : tiles) {
            seg.push_back(seg_f1(cm));
            bool has_building = false;
            for (int t = 1; t <= 4; ++t)
                for (int p = 0; p < label::num_classes; ++p) has_building |= cm.counts[t][p] > 0;
            if (!has_building) continue;
            const auto cls = cls_f1(cm);
            if (cls.overall) overall.push_back(*cls.overall);
            for (int c = 0; c < 4; ++c)
                if (cls.per_class[c]) per_class[c].push_back(*cls.per_class[c]);
        }
        r.segmentation_f1 = *mean_of(seg);
        r.classification_f1 = mean_of(overall);
        for (int c = 0; c < 4; ++c) r.per_class_f1[c] = mean_of(per_class[c]);
        r.notes = "pixel-level F1, macro-averaged over tiles";
    }
    r.model_size_bytes = model_size_bytes;
    r.train_time_seconds = train_time_seconds;
    r.method_tag = std::move(method_tag);
    r.dataset_tag = std::move(dataset_tag);
    return r;
}

std::string format_size(std::uint64_t bytes) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g MB", static_cast<double>(bytes) / 1e6);
    return buf;
}

std::string format_duration(double seconds) {
    const auto total_minutes = static_cast<long>(std::llround(seconds / 60.0));
    const long hours = total_minutes / 60, minutes = total_minutes % 60;
    std::ostringstream os;
    if (hours > 0) os << hours << (hours == 1 ? " hr " : " hrs ");
    os << minutes << (minutes == 1 ? " min" : " mins");
    return os.str();
}

namespace {

std::string f1_cell(const std::optional<double>& v) {
    if (!v) return "n/a";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return buf;
}

std::string render_grid(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths;
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (widths.size() <= c) widths.push_back(0);
            widths[c] = std::max(widths[c], row[c].size());
        }
    std::ostringstream os;
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            os << row[c];
            if (c + 1 < row.size()) os << std::string(widths[c] - row[c].size() + 2, ' ');
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace

std::string render_table1(const std::vector<EvalReport>& reports) {
    std::vector<std::vector<std::string>> rows(4);
    rows[0].push_back("");
    rows[1].push_back("size");
    rows[2].push_back("Segmentation F1");
    rows[3].push_back("Classification F1");
    for (const auto& r : reports) {
        rows[0].push_back(r.method_tag);
        rows[1].push_back(format_size(r.model_size_bytes));
        rows[2].push_back(f1_cell(r.segmentation_f1));
        rows[3].push_back(f1_cell(r.classification_f1));
    }
    return render_grid(rows);
}

std::string render_table2(const std::vector<EvalReport>& reports) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"", "Training time", "classification F1", "segmentation F1"});
    for (const auto& r : reports)
        rows.push_back({r.dataset_tag, format_duration(r.train_time_seconds), f1_cell(r.classification_f1),
                        f1_cell(r.segmentation_f1)});
    return render_grid(rows);
}

}  // namespace clifgan::metrics
