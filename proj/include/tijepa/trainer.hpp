#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "tijepa/checkpoint.hpp"
#include "tijepa/config.hpp"
#include "tijepa/dataprep.hpp"
#include "tijepa/log.hpp"
#include "tijepa/optim.hpp"
#include "tijepa/pipeline.hpp"

namespace tijepa {

struct StepMetrics {
    std::uint64_t step = 0; // 1-based index of the completed step
    double loss = 0.0;
    double collapse = 0.0; // only filled on log steps
    double ema_m = 0.0;
    std::size_t examples = 0;
    bool logged = false;
};

// `step<TAB>loss<TAB>collapse<TAB>ema_m`
inline std::string format_metrics_line(const StepMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%.9g", static_cast<unsigned long long>(m.step), m.loss,
                  m.collapse, m.ema_m);
    return buf;
}

// CRC-64 over the raw bytes of every parameter, in visit order.
template <typename M>
std::uint64_t parameter_hash(M& module) {
    Crc64 crc;
    module.visit("", [&crc](const std::string& name, auto& t) {
        crc.process_bytes(name.data(), name.size());
        const auto d = t.data();
        crc.process_bytes(d.data(), d.size() * sizeof(d[0]));
    });
    return crc.checksum();
}

// Pretraining loop state: model, optimizer, and the step counter. Every
// random draw is derived from (seed, epoch, example index), so the counter
// is the only generator state that needs persisting.
class Trainer {
public:
    explicit Trainer(const TiJepaConfig& cfg) : model_(cfg) { rebuild_optimizer(); }

    const TiJepaConfig& config() const { return model_.cfg; }
    TiJepaModel<float>& model() { return model_; }
    const TiJepaModel<float>& model() const { return model_; }
    AdamW<float>& optimizer() { return optimizer_; }
    std::uint64_t step() const { return step_; }
    std::uint64_t skipped_examples() const { return skipped_; }

    EmaSchedule ema_schedule() const {
        return {model_.cfg.ema_start, model_.cfg.ema_end, std::max<std::uint64_t>(model_.cfg.steps, 1)};
    }

    // Dataset index of the b-th example of a step: each epoch walks a fresh
    // seeded permutation.
    std::pair<std::uint64_t, std::size_t> example_slot(std::uint64_t step, std::size_t b, std::size_t n) {
        const std::uint64_t g = step * model_.cfg.batch_size + b;
        const std::uint64_t epoch = g / n;
        if (!perm_epoch_ || *perm_epoch_ != epoch || perm_.size() != n) {
            perm_.resize(n);
            for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
            Rng rng = Rng::derive({model_.cfg.seed, epoch, 0xba7c4});
            rng.shuffle(perm_);
            perm_epoch_ = epoch;
        }
        return {epoch, perm_[g % n]};
    }

    StepMetrics train_step(const std::vector<PairedExample>& data) {
        if (data.empty()) throw ConfigError("train: dataset is empty");
        const auto& cfg = model_.cfg;
        const GridSize grid = cfg.grid();
        StepMetrics metrics;
        metrics.step = step_ + 1;
        const bool log_step = cfg.log_every > 0 && (step_ + 1) % cfg.log_every == 0;

        optimizer_.zero_grad();
        Tape<float> tape;
        TapeScope<float> scope(tape);
        std::optional<Tensor> total;
        std::vector<Tensor> target_reps;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto [epoch, idx] = example_slot(step_, b, data.size());
            const auto& ex = data[idx];
            if (ex.image.height != cfg.image_size || ex.image.width != cfg.image_size) {
                throw ShapeError("example " + std::to_string(idx) + " has size " + std::to_string(ex.image.height) +
                                 "x" + std::to_string(ex.image.width) + ", config expects " +
                                 std::to_string(cfg.image_size));
            }
            Rng mask_rng = Rng::derive({cfg.seed, epoch, idx});
            MaskSet masks;
            try {
                masks = sample_masks(grid, cfg.masking, mask_rng);
            } catch (const SamplingError& e) {
                ++skipped_;
                log::warn("skipping example " + std::to_string(idx) + ": " + e.what());
                continue;
            }
            const auto ids = model_.tokenize(ex.caption);
            auto loss = example_loss(model_, ex.image, ids, masks);
            total = total ? add(*total, loss) : loss;
            ++metrics.examples;
            if (log_step) {
                NoGradScope<float> no_grad;
                target_reps.push_back(model_.target(model_.image_encoder(ex.image), model_.text_encoder(ids)));
            }
        }
        if (!total) throw SamplingError("train: every example in the batch failed mask sampling");
        auto loss = scale(*total, 1.0f / static_cast<float>(metrics.examples));
        metrics.loss = loss.item();
        if (!std::isfinite(metrics.loss)) throw NumericalError("non-finite loss at step " + std::to_string(step_ + 1));
        tape.backward(loss);
        optimizer_.step();
        metrics.ema_m = momentum_at(static_cast<std::int64_t>(step_), ema_schedule());
        ema_update(model_.target, model_.online, metrics.ema_m);
        ++step_;
        if (log_step && target_reps.size() >= 2) {
            metrics.collapse = collapse_metric(target_reps);
            metrics.logged = true;
        }
        return metrics;
    }

    // Runs until `config().steps` steps have completed (resumes from step()).
    // Logged steps go to `metrics_out`; checkpoints every checkpoint_every
    // steps are written into `ckpt_dir` when given.
    std::vector<StepMetrics> run(const std::vector<PairedExample>& data, std::ostream* metrics_out = nullptr,
                                 const std::optional<std::filesystem::path>& ckpt_dir = {}) {
        std::vector<StepMetrics> history;
        while (step_ < model_.cfg.steps) {
            auto m = train_step(data);
            if (m.logged) {
                if (metrics_out) *metrics_out << format_metrics_line(m) << '\n';
                log::info("step " + std::to_string(m.step) + " loss " + std::to_string(m.loss) + " collapse " +
                          std::to_string(m.collapse));
            }
            if (ckpt_dir && model_.cfg.checkpoint_every > 0 && step_ % model_.cfg.checkpoint_every == 0) {
                export_state().save(*ckpt_dir / ("step_" + std::to_string(step_) + ".tijp"));
            }
            history.push_back(m);
        }
        return history;
    }

    TensorTable export_state() {
        TensorTable table;
        store_module(table, model_);
        for (const auto& s : optimizer_.slots()) {
            table.put("optim.m." + s.name, Tensor(s.param.shape(), s.m));
            table.put("optim.v." + s.name, Tensor(s.param.shape(), s.v));
        }
        table.put_u64("meta.counters", {step_, optimizer_.step_count(), skipped_});
        table.put_bytes("meta.config", serialize_config(model_.cfg));
        return table;
    }

    static Trainer from_state(const TensorTable& table) {
        Trainer t(parse_config(table.get_bytes("meta.config")));
        t.import_state(table);
        return t;
    }

    // Restores parameters, optimizer moments and counters. The table must
    // not contain tensors the model does not know about.
    void import_state(const TensorTable& table) {
        std::set<std::string> known = {"meta.counters", "meta.config"};
        model_.visit("", [&known](const std::string& name, auto&) { known.insert(name); });
        for (const auto& s : optimizer_.slots()) {
            known.insert("optim.m." + s.name);
            known.insert("optim.v." + s.name);
        }
        for (const auto& [name, e] : table.entries()) {
            if (!known.count(name)) throw FormatError("checkpoint contains unknown tensor '" + name + "'");
        }
        restore_module(table, model_);
        for (auto& s : optimizer_.slots()) {
            const auto m = table.get("optim.m." + s.name);
            const auto v = table.get("optim.v." + s.name);
            if (m.size() != s.m.size() || v.size() != s.v.size()) {
                throw FormatError("optimizer state for '" + s.name + "' has the wrong size");
            }
            s.m.assign(m.data().begin(), m.data().end());
            s.v.assign(v.data().begin(), v.data().end());
        }
        const auto counters = table.get_u64("meta.counters");
        if (counters.size() != 3) throw FormatError("meta.counters must hold 3 values");
        step_ = counters[0];
        optimizer_.set_step_count(counters[1]);
        skipped_ = counters[2];
    }

private:
    void rebuild_optimizer() {
        const auto& c = model_.cfg;
        optimizer_ = AdamW<float>({c.lr, c.beta1, c.beta2, c.adam_eps, c.weight_decay}, trainable_parameters(model_));
    }

    TiJepaModel<float> model_;
    AdamW<float> optimizer_;
    std::uint64_t step_ = 0;
    std::uint64_t skipped_ = 0;
    std::vector<std::size_t> perm_;
    std::optional<std::uint64_t> perm_epoch_;
};

// Mean L_P over a dataset with fixed per-example masks. With
// `permute_captions`, the context path sees another example's caption while
// the targets keep the true one.
inline double evaluate_prediction_loss(const TiJepaModel<float>& model, const std::vector<PairedExample>& data,
                                       std::uint64_t seed, bool permute_captions) {
    NoGradScope<float> no_grad;
    const GridSize grid = model.grid();
    std::vector<std::size_t> perm(data.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    if (permute_captions && data.size() > 1) {
        // Cyclic shift of a seeded shuffle: no example keeps its own caption.
        Rng rng = Rng::derive({seed, 0xca9});
        std::vector<std::size_t> order = perm;
        rng.shuffle(order);
        for (std::size_t k = 0; k < order.size(); ++k) perm[order[k]] = order[(k + 1) % order.size()];
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Rng rng = Rng::derive({seed, 0xe7a1, i});
        MaskSet masks;
        try {
            masks = sample_masks(grid, model.cfg.masking, rng);
        } catch (const SamplingError&) {
            continue;
        }
        const auto ids = model.tokenize(data[i].caption);
        const auto ctx_ids = model.tokenize(data[perm[i]].caption);
        total += example_loss(model, data[i].image, ids, masks, &ctx_ids).item();
        ++count;
    }
    if (count == 0) throw SamplingError("evaluation: no example produced a valid mask set");
    return total / static_cast<double>(count);
}

} // namespace tijepa
