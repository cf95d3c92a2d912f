#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "clifgan/log.hpp"
#include "clifgan/metrics.hpp"
#include "clifgan/segnet.hpp"

namespace clifgan::segnet {

using nlohmann::json;

double poly_lr(long iteration, long total_iterations, double initial_lr, double power) {
    if (total_iterations < 1) throw ConfigError("poly_lr: total_iterations must be >= 1");
    if (iteration < 0 || iteration > total_iterations) throw ConfigError("poly_lr: iteration out of range");
    const double frac = 1.0 - static_cast<double>(iteration) / static_cast<double>(total_iterations);
    return initial_lr * std::pow(frac, power);
}

void TrainSchedule::validate() const {
    if (!(initial_lr > 0) || !(momentum >= 0) || !(weight_decay >= 0) || !(poly_power > 0))
        throw ConfigError("schedule: rates and powers must be positive");
    if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("schedule: max_epochs must be >= 1");
    if (early_stop_patience < 1 || eval_every < 1) throw ConfigError("schedule: patience and eval_every must be >= 1");
    if (augmentation) augmentation->validate();
}

void to_json(json& j, const TrainSchedule& s) {
    j = json{{"initial_lr", s.initial_lr},
             {"batch_size", s.batch_size},
             {"momentum", s.momentum},
             {"weight_decay", s.weight_decay},
             {"poly_power", s.poly_power},
             {"max_epochs", s.max_epochs},
             {"early_stop_patience", s.early_stop_patience},
             {"eval_every", s.eval_every},
             {"early_stop_metric", s.early_stop_metric == EarlyStopMetric::seg_f1 ? "seg_f1" : "cls_f1"},
             {"seed", s.seed}};
    j["augmentation"] = s.augmentation ? json(*s.augmentation) : json(nullptr);
}

void from_json(const json& j, TrainSchedule& s) {
    TrainSchedule d;
    s.initial_lr = j.value("initial_lr", d.initial_lr);
    s.batch_size = j.value("batch_size", d.batch_size);
    s.momentum = j.value("momentum", d.momentum);
    s.weight_decay = j.value("weight_decay", d.weight_decay);
    s.poly_power = j.value("poly_power", d.poly_power);
    s.max_epochs = j.value("max_epochs", d.max_epochs);
    s.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
    s.eval_every = j.value("eval_every", d.eval_every);
    const std::string metric = j.value("early_stop_metric", "seg_f1");
    if (metric != "seg_f1" && metric != "cls_f1") throw ConfigError("schedule: unknown early_stop_metric '" + metric + "'");
    s.early_stop_metric = metric == "seg_f1" ? EarlyStopMetric::seg_f1 : EarlyStopMetric::cls_f1;
    s.seed = j.value("seed", d.seed);
    if (j.contains("augmentation") && !j.at("augmentation").is_null())
        s.augmentation = j.at("augmentation").get<data::AugmentationConfig>();
    else
        s.augmentation.reset();
    s.validate();
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(const data::DatasetManifest& manifest, int batch_size, std::uint64_t seed,
                         std::optional<data::AugmentationConfig> augmentation)
    : batch_size_(batch_size), seed_(seed), augmentation_(std::move(augmentation)) {
    for (std::size_t i = 0; i < manifest.size(); ++i) samples_.push_back(manifest.load(i));
}

int BatchStream::batches_per_epoch() const {
    return static_cast<int>((samples_.size() + batch_size_ - 1) / batch_size_);
}

std::vector<Batch> BatchStream::epoch(int epoch) const {
    const std::uint64_t epoch_seed = derive_seed(seed_, "epoch:" + std::to_string(epoch));
    std::vector<std::size_t> order(samples_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(epoch_seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
        std::vector<std::shared_ptr<const data::TileSample>> chunk;
        for (std::size_t k = start; k < std::min(order.size(), start + batch_size_); ++k) {
            const auto& s = samples_[order[k]];
            if (augmentation_) {
                Rng aug_rng(derive_seed(epoch_seed, s->id));
                chunk.push_back(std::make_shared<const data::TileSample>(data::augment(*s, *augmentation_, aug_rng)));
            } else {
                chunk.push_back(s);
            }
        }
        batches.push_back(make_batch(chunk));
    }
    return batches;
}

LoopResult run_sgd_loop(torch::nn::Module& module, std::vector<torch::Tensor> parameters,
                        const data::DatasetManifest& train, const TrainSchedule& schedule, const LoopHooks& hooks) {
    schedule.validate();
    if (train.empty()) throw Error("training manifest is empty");
    const auto start = std::chrono::steady_clock::now();
    BatchStream stream(train, schedule.batch_size, schedule.seed, schedule.augmentation);
    const long total_iterations = static_cast<long>(schedule.max_epochs) * stream.batches_per_epoch();

    torch::optim::SGD optimizer(std::move(parameters), torch::optim::SGDOptions(schedule.initial_lr)
                                                           .momentum(schedule.momentum)
                                                           .weight_decay(schedule.weight_decay));
    LoopResult result;
    result.best_metric = -std::numeric_limits<double>::infinity();
    int stale = 0;
    long iteration = 0;
    for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
        if (hooks.set_train_mode)
            hooks.set_train_mode();
        else
            module.train();
        double loss_sum = 0;
        double lr = schedule.initial_lr;
        const auto batches = stream.epoch(epoch);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            lr = poly_lr(iteration, total_iterations, schedule.initial_lr, schedule.poly_power);
            for (auto& group : optimizer.param_groups())
                static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
            optimizer.zero_grad();
            auto loss = hooks.loss(batches[b]);
            const double value = loss.item<double>();
            if (!std::isfinite(value)) {
                std::ostringstream os;
                os << "non-finite loss at epoch " << epoch << ", batch " << b << " (samples:";
                for (const auto& id : batches[b].ids) os << ' ' << id;
                os << ')';
                throw Error(os.str());
            }
            loss.backward();
            optimizer.step();
            loss_sum += value;
            ++iteration;
        }
        TrainLogRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches.size());
        rec.lr = lr;
        rec.val_metric = std::nan("");
        result.epochs_run = epoch + 1;

        if (hooks.validate && (epoch + 1) % schedule.eval_every == 0) {
            module.eval();
            rec.val_metric = hooks.validate();
            if (rec.val_metric > result.best_metric) {
                result.best_metric = rec.val_metric;
                result.best_epoch = epoch;
                result.best_weights = capture_weights(module);
                stale = 0;
            } else {
                ++stale;
            }
        }
        result.log.push_back(rec);
        log::debug("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss));
        if (hooks.validate && stale >= schedule.early_stop_patience) break;
    }
    if (!result.best_weights.empty()) restore_weights(module, result.best_weights);
    module.eval();
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// ---------------------------------------------------------------------------

torch::Tensor task_input(const Batch& b, SegTask task) { return task == SegTask::damage ? b.post : b.pre; }
torch::Tensor task_target(const Batch& b, SegTask task) { return task == SegTask::damage ? b.post_mask : b.pre_mask; }
const Image& task_image(const data::TileSample& s, SegTask task) {
    return task == SegTask::damage ? s.post_image : s.pre_image;
}

namespace {
const DamageMask& task_truth(const data::TileSample& s, SegTask task) {
    return task == SegTask::damage ? s.post_mask : s.pre_mask;
}
}  // namespace

DamageMask predict_mask(SegModel& model, const Image& image) {
    torch::NoGradGuard guard;
    model->eval();
    const auto logits = model->forward(image_to_tensor(image));
    return tensor_to_mask(argmax_labels(logits)[0]);
}

double validation_metric(SegModel& model, const data::DatasetManifest& val, EarlyStopMetric metric) {
    metrics::ConfusionMatrix cm;
    const SegTask task = model->config().task;
    for (std::size_t i = 0; i < val.size(); ++i) {
        const auto s = val.load(i);
        cm.add(predict_mask(model, task_image(*s, task)), task_truth(*s, task));
    }
    if (metric == EarlyStopMetric::seg_f1) return metrics::seg_f1(cm);
    return metrics::cls_f1(cm).overall.value_or(0.0);
}

json segnet_arch(const SegModelConfig& config) { return json{{"kind", "segnet"}, {"config", config}}; }

ModelCheckpoint make_checkpoint(SegModel& model, CheckpointProvenance provenance) {
    ModelCheckpoint ckpt;
    ckpt.provenance = provenance;
    ckpt.arch_config = segnet_arch(model->config());
    ckpt.weights = capture_weights(*model);
    return ckpt;
}

SegModel load_segmodel(const ModelCheckpoint& ckpt) {
    const std::string kind = ckpt.arch_config.value("kind", "");
    std::string prefix;
    if (kind == "segnet") prefix = "";
    else if (kind == "segnet+projection") prefix = "model.";
    else if (kind == "siamese") prefix = "extractor.";
    else throw Error("checkpoint does not hold a segmentation model (kind '" + kind + "')");
    auto config = ckpt.arch_config.at(kind == "siamese" ? "segnet" : "config").get<SegModelConfig>();
    config.backbone.pretrained = false;
    SegModel model(config);
    restore_weights(*model, ckpt.weights, prefix);
    model->eval();
    return model;
}

ModelCheckpoint train_vanilla(SegModel& model, const data::DatasetManifest& train, const data::DatasetManifest& val,
                              const TrainSchedule& schedule, CheckpointProvenance provenance) {
    if (train.empty()) throw Error("train_vanilla: training manifest is empty");
    if (val.empty()) throw Error("train_vanilla: validation manifest is empty; validation is mandatory");
    const SegTask task = model->config().task;
    LoopHooks hooks;
    hooks.loss = [&](const Batch& b) { return masked_cross_entropy(model->forward(task_input(b, task)), task_target(b, task)); };
    hooks.validate = [&] { return validation_metric(model, val, schedule.early_stop_metric); };
    auto result = run_sgd_loop(*model, model->parameters(), train, schedule, hooks);
    auto ckpt = make_checkpoint(model, provenance);
    ckpt.train_log = std::move(result.log);
    ckpt.train_time_seconds = result.seconds;
    return ckpt;
}

}  // namespace clifgan::segnet
