#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "clifgan/classify.hpp"
#include "clifgan/contrastive.hpp"
#include "clifgan/fuse.hpp"
#include "clifgan/gan.hpp"
#include "clifgan/metrics.hpp"
#include "clifgan/segnet.hpp"

namespace clifgan::cli {

enum ExitCode { ok = 0, runtime_failure = 1, usage_error = 2 };

/// Every stage's settings in one document. Loaded from JSON with per-stage
/// sections; missing sections keep their defaults.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "clifgan_out";
    double data_fraction = 1.0;
    std::string use_gan = "none";  // none | gan1 | gan2

    data::SyntheticSceneSpec synthetic;
    int synthetic_count = 200;
    double train_fraction = 0.9;
    data::IngestConfig ingest;

    segnet::SegModelConfig segnet;
    segnet::TrainSchedule train_seg;

    contrastive::ContrastiveConfig contrastive;
    segnet::TrainSchedule pretrain;
    segnet::TrainSchedule finetune;

    gan::GeneratorConfig generator;
    gan::DiscriminatorConfig discriminator;
    gan::GanTrainConfig gan_train;
    gan::MaskEditSpec edit;

    int head_channels = 64;
    bool freeze_extractor = false;
    segnet::TrainSchedule train_cls;

    fuse::MorphologyConfig morphology;
    metrics::Aggregation aggregation = metrics::Aggregation::micro;

    void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Throws ConfigError on unknown sections or invalid values.
void from_json(const nlohmann::json& j, PipelineConfig& c);

PipelineConfig load_config(const std::filesystem::path& path);

/// Seed for a named stage, derived from the global seed.
std::uint64_t stage_seed(const PipelineConfig& c, const std::string& stage);

/// Runs one command line (without the program name). Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args);

}  // namespace clifgan::cli
