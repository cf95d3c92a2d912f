#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clifgan/data.hpp"

namespace clifgan::metrics {

/// Pixel counts over classes 0..4, rows = truth, cols = prediction. Pixels
/// whose truth is 255 are not counted; a predicted 255 counts as background.
struct ConfusionMatrix {
    static constexpr int K = label::num_classes;
    std::array<std::array<std::uint64_t, K>, K> counts{};

    void add(const DamageMask& pred, const DamageMask& truth);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    std::uint64_t total() const;
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(const DamageMask& pred, const DamageMask& truth);

/// 2TP/(2TP+FP+FN), defined as 1 when all three are zero.
double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

/// Building (label >= 1) vs background pixel F1.
double seg_f1(const ConfusionMatrix& cm);
double seg_f1(const DamageMask& pred, const DamageMask& truth);

struct ClassificationScore {
    /// Harmonic mean over damage classes present in truth or prediction
    /// (restricted to truth-building pixels). Empty when truth has no
    /// building pixels.
    std::optional<double> overall;
    /// Per damage class 1..4; empty when the class is absent from both.
    std::array<std::optional<double>, 4> per_class;
};

ClassificationScore cls_f1(const ConfusionMatrix& cm);
ClassificationScore cls_f1(const DamageMask& pred, const DamageMask& truth);

struct EvalReport {
    double segmentation_f1 = 0;
    std::optional<double> classification_f1;
    std::array<std::optional<double>, 4> per_class_f1;
    std::uint64_t model_size_bytes = 0;
    double train_time_seconds = 0;
    std::string dataset_tag;
    std::string method_tag;
    std::string notes = "pixel-level F1, micro-aggregated over tiles";
    ConfusionMatrix confusion;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

using DamagePredictor = std::function<DamageMask(const data::TileSample&)>;

/// micro: confusion counts summed over every tile before computing F1.
/// macro: F1s computed per tile and averaged over tiles where defined.
enum class Aggregation { micro, macro };

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

EvalReport evaluate(const DamagePredictor& predict, const data::DatasetManifest& test, std::uint64_t model_size_bytes,
                    double train_time_seconds, std::string method_tag = {}, std::string dataset_tag = {},
                    Aggregation aggregation = Aggregation::micro);

/// "228 MB", "9.7 MB" (decimal megabytes, three significant digits).
std::string format_size(std::uint64_t bytes);
/// "11 hrs 23 mins", "1 hr 2 mins".
std::string format_duration(double seconds);

/// Table 1 layout: one column per report; rows size / Segmentation F1 /
/// Classification F1.
std::string render_table1(const std::vector<EvalReport>& reports);
/// Table 2 layout: one row per report; columns training time /
/// classification F1 / segmentation F1.
std::string render_table2(const std::vector<EvalReport>& reports);

}  // namespace clifgan::metrics
