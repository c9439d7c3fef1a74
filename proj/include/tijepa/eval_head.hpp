#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "tijepa/checkpoint.hpp"
#include "tijepa/dataprep.hpp"
#include "tijepa/layers.hpp"
#include "tijepa/log.hpp"
#include "tijepa/optim.hpp"
#include "tijepa/pipeline.hpp"

namespace tijepa {

inline constexpr std::size_t kNumClasses = 3;

// Linear layer from the pooled fused representation to 3 sentiment logits.
template <typename T>
struct ClassificationHead {
    using scalar_type = T;

    Linear<T> linear;

    ClassificationHead() = default;
    ClassificationHead(std::size_t dim, Rng& rng, double init_std) : linear(dim, kNumClasses, rng, init_std) {}

    BasicTensor<T> operator()(const BasicTensor<T>& pooled) const { return linear(pooled); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        linear.visit(prefix + "head", f);
    }
};

// Mean over patch tokens of the fused full-image representation, [1 × d].
// Computed without gradient: the backbone never trains here.
inline Tensor pooled_features(const TiJepaModel<float>& model, const Image& image, const std::string& caption,
                              HeadInput source) {
    NoGradScope<float> no_grad;
    const auto s_image = model.image_encoder(image);
    const auto s_text = model.text_encoder(model.tokenize(caption));
    const auto& fusion = source == HeadInput::online ? model.online : model.target;
    return mean_rows(fusion(s_image, s_text));
}

inline Tensor pool_and_classify(const TiJepaModel<float>& model, const ClassificationHead<float>& head,
                                const Image& image, const std::string& caption, HeadInput source) {
    return head(pooled_features(model, image, caption, source));
}

inline std::size_t argmax(std::span<const float> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

struct LabeledFeatures {
    std::vector<Tensor> features; // each [1 × d]
    std::vector<std::size_t> labels;
};

inline LabeledFeatures extract_features(const TiJepaModel<float>& model, const std::vector<PairedExample>& data,
                                        HeadInput source) {
    LabeledFeatures out;
    for (const auto& ex : data) {
        if (!ex.label) throw FormatError("classification data contains an unlabeled example");
        out.features.push_back(pooled_features(model, ex.image, ex.caption, source));
        out.labels.push_back(static_cast<std::size_t>(*ex.label));
    }
    return out;
}

struct HeadTrainOptions {
    std::size_t epochs = 40;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
};

inline double head_accuracy(const ClassificationHead<float>& head, const LabeledFeatures& set) {
    if (set.features.empty()) return 0.0;
    NoGradScope<float> no_grad;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.features.size(); ++i) {
        if (argmax(head(set.features[i]).data()) == set.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.features.size());
}

// Adam (no weight decay) on the head only, mean cross-entropy per minibatch.
// Returns validation accuracy after each epoch (empty val set: no entries).
inline std::vector<double> finetune_head(ClassificationHead<float>& head, const LabeledFeatures& train,
                                         const LabeledFeatures& val, const HeadTrainOptions& opts) {
    if (train.features.empty()) throw ConfigError("finetune: empty training split");
    if (opts.batch_size == 0) throw ConfigError("finetune: batch size must be >= 1");
    AdamW<float> adam({opts.lr, 0.9, 0.999, 1e-8, 0.0}, trainable_parameters(head));
    std::vector<std::size_t> order(train.features.size());
    std::vector<double> val_history;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng = Rng::derive({opts.seed, 0x4ead, epoch});
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            adam.zero_grad();
            Tape<float> tape;
            TapeScope<float> scope(tape);
            std::optional<Tensor> total;
            for (std::size_t k = start; k < end; ++k) {
                auto l = cross_entropy(head(train.features[order[k]]), train.labels[order[k]]);
                total = total ? add(*total, l) : l;
            }
            auto loss = scale(*total, 1.0f / static_cast<float>(end - start));
            tape.backward(loss);
            adam.step();
        }
        if (!val.features.empty()) {
            val_history.push_back(head_accuracy(head, val));
            log::info("head epoch " + std::to_string(epoch + 1) + " val_acc " + std::to_string(val_history.back()));
        }
    }
    return val_history;
}

// ---- metrics ---------------------------------------------------------------

// rows = true class, cols = predicted class
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

    void add(std::size_t truth, std::size_t predicted) {
        if (truth >= kNumClasses || predicted >= kNumClasses) throw ShapeError("confusion matrix: class out of range");
        ++counts[truth][predicted];
    }
    void merge(const ConfusionMatrix& o) {
        for (std::size_t i = 0; i < kNumClasses; ++i)
            for (std::size_t j = 0; j < kNumClasses; ++j) counts[i][j] += o.counts[i][j];
    }
    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& r : counts)
            for (auto c : r) t += c;
        return t;
    }
    std::uint64_t trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
    bool zero_division = false; // some ratio was 0/0 and set to 0
};

struct MetricsReport {
    std::array<ClassMetrics, kNumClasses> per_class{};
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::uint64_t total = 0;
};

// One-vs-rest precision, recall and F1 per class (0/0 taken as 0), accuracy
// = trace/total, macro-F1 and support-weighted F1.
inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    MetricsReport rep;
    rep.total = cm.total();
    if (rep.total == 0) throw ConfigError("compute_metrics: empty confusion matrix");
    auto ratio = [](double num, double den, bool& flag) {
        if (den == 0.0) {
            flag = true;
            return 0.0;
        }
        return num / den;
    };
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::uint64_t tp = cm.counts[c][c], fp = 0, fn = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            if (k == c) continue;
            fp += cm.counts[k][c];
            fn += cm.counts[c][k];
        }
        auto& m = rep.per_class[c];
        m.support = tp + fn;
        m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp), m.zero_division);
        m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn), m.zero_division);
        m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall, m.zero_division);
        rep.macro_f1 += m.f1 / static_cast<double>(kNumClasses);
        rep.weighted_f1 += m.f1 * static_cast<double>(m.support) / static_cast<double>(rep.total);
    }
    rep.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(rep.total);
    return rep;
}

inline ConfusionMatrix evaluate_head(const ClassificationHead<float>& head, const LabeledFeatures& set) {
    NoGradScope<float> no_grad;
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < set.features.size(); ++i) cm.add(set.labels[i], argmax(head(set.features[i]).data()));
    return cm;
}

// Accuracy % / F1 % table followed by the per-class breakdown.
inline std::string format_report(const MetricsReport& r) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %10s %12s %15s\n", "", "Accuracy %", "Macro-F1 %", "Weighted-F1 %");
    os << buf;
    std::snprintf(buf, sizeof buf, "%-10s %10.2f %12.2f %15.2f\n", "overall", 100 * r.accuracy, 100 * r.macro_f1,
                  100 * r.weighted_f1);
    os << buf;
    std::snprintf(buf, sizeof buf, "\n%-10s %10s %10s %10s %8s\n", "class", "P %", "R %", "F1 %", "support");
    os << buf;
    bool flagged = false;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto& m = r.per_class[c];
        std::snprintf(buf, sizeof buf, "%-10s %10.2f %10.2f %10.2f %8llu%s\n",
                      std::string(to_string(static_cast<Sentiment>(c))).c_str(), 100 * m.precision, 100 * m.recall,
                      100 * m.f1, static_cast<unsigned long long>(m.support), m.zero_division ? " *" : "");
        os << buf;
        flagged = flagged || m.zero_division;
    }
    if (flagged) os << "* 0/0 ratio reported as 0\n";
    return os.str();
}

inline std::string format_report_kv(const MetricsReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "accuracy=" << r.accuracy << "\nmacro_f1=" << r.macro_f1 << "\nweighted_f1=" << r.weighted_f1
       << "\ntotal=" << r.total << '\n';
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const auto name = std::string(to_string(static_cast<Sentiment>(c)));
        const auto& m = r.per_class[c];
        os << name << ".precision=" << m.precision << '\n'
           << name << ".recall=" << m.recall << '\n'
           << name << ".f1=" << m.f1 << '\n'
           << name << ".support=" << m.support << '\n'
           << name << ".zero_division=" << (m.zero_division ? 1 : 0) << '\n';
    }
    return os.str();
}

// Head checkpoint: head tensors plus the backbone config it was trained on.
inline TensorTable export_head(ClassificationHead<float>& head, const TiJepaConfig& cfg) {
    TensorTable t;
    store_module(t, head);
    t.put_bytes("meta.config", serialize_config(cfg));
    return t;
}

inline ClassificationHead<float> import_head(const TensorTable& table, std::size_t dim) {
    Rng rng(0);
    ClassificationHead<float> head(dim, rng, 0.0);
    for (const auto& [name, e] : table.entries()) {
        if (name != "head.weight" && name != "head.bias" && name != "meta.config") {
            throw FormatError("head checkpoint contains unknown tensor '" + name + "'");
        }
    }
    restore_module(table, head);
    return head;
}

} // namespace tijepa
