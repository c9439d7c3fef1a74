#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tijepa/encoders.hpp"
#include "tijepa/errors.hpp"
#include "tijepa/image_io.hpp"
#include "tijepa/rng.hpp"

namespace tijepa {

enum class Sentiment : std::uint8_t { positive = 0, neutral = 1, negative = 2 };

inline constexpr std::array<Sentiment, 3> kSentiments = {Sentiment::positive, Sentiment::neutral,
                                                         Sentiment::negative};

inline std::string_view to_string(Sentiment s) {
    switch (s) {
    case Sentiment::positive: return "positive";
    case Sentiment::neutral: return "neutral";
    case Sentiment::negative: return "negative";
    }
    return "?";
}

inline std::optional<Sentiment> parse_sentiment(std::string_view s) {
    if (s == "positive") return Sentiment::positive;
    if (s == "neutral") return Sentiment::neutral;
    if (s == "negative") return Sentiment::negative;
    return std::nullopt;
}

// ---- label reconciliation ------------------------------------------------

// Text vs image label of one pair: agreement is kept, positive/negative
// conflicts are dropped, and neutral defers to the other modality.
inline std::optional<Sentiment> reconcile_single(Sentiment text, Sentiment image) {
    if (text == image) return text;
    if (text == Sentiment::neutral) return image;
    if (image == Sentiment::neutral) return text;
    return std::nullopt;
}

// Label held by at least two of three annotators; none when all differ.
inline std::optional<Sentiment> majority_vote(const std::array<Sentiment, 3>& labels) {
    if (labels[0] == labels[1] || labels[0] == labels[2]) return labels[0];
    if (labels[1] == labels[2]) return labels[1];
    return std::nullopt;
}

struct AnnotatedPair {
    std::string id;
    std::vector<Sentiment> text_labels;
    std::vector<Sentiment> image_labels;
};

enum class AnnotationMode { single, multi };

inline std::optional<Sentiment> reconcile_multi(const AnnotatedPair& pair) {
    if (pair.text_labels.size() != 3 || pair.image_labels.size() != 3) {
        throw FormatError("pair " + pair.id + ": multi-annotator mode needs 3 text and 3 image labels");
    }
    const auto text = majority_vote({pair.text_labels[0], pair.text_labels[1], pair.text_labels[2]});
    const auto image = majority_vote({pair.image_labels[0], pair.image_labels[1], pair.image_labels[2]});
    if (!text || !image) return std::nullopt;
    return reconcile_single(*text, *image);
}

inline std::optional<Sentiment> reconcile(const AnnotatedPair& pair, AnnotationMode mode) {
    if (mode == AnnotationMode::multi) return reconcile_multi(pair);
    if (pair.text_labels.size() != 1 || pair.image_labels.size() != 1) {
        throw FormatError("pair " + pair.id + ": single-annotator mode needs exactly one text and one image label");
    }
    return reconcile_single(pair.text_labels[0], pair.image_labels[0]);
}

// Per-class counts after reconciliation, laid out like the MVSA summary table.
struct ReconcileStats {
    std::array<std::size_t, 3> kept{}; // indexed by Sentiment
    std::size_t discarded = 0;
    std::size_t ambiguous_majority = 0;   // multi: a modality had no majority
    std::size_t conflicting_majority = 0; // multi: majorities were positive vs negative
    std::size_t total() const { return kept[0] + kept[1] + kept[2]; }
};

struct ReconciledLabel {
    std::string id;
    Sentiment label;
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto p = s.find(sep, start);
        out.emplace_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
        if (p == std::string_view::npos) break;
        start = p + 1;
    }
    return out;
}

inline std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

} // namespace detail

// `id<TAB>text_labels<TAB>image_labels`, labels comma-separated.
inline std::vector<AnnotatedPair> parse_annotations(std::istream& in) {
    std::vector<AnnotatedPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto fields = detail::split(line, '\t');
        if (fields.size() != 3) {
            throw FormatError("annotations line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
        }
        AnnotatedPair pair{fields[0], {}, {}};
        auto parse_list = [&](const std::string& f, std::vector<Sentiment>& dst) {
            for (const auto& tok : detail::split(f, ',')) {
                const auto s = parse_sentiment(tok);
                if (!s) throw FormatError("annotations line " + std::to_string(lineno) + ": bad label '" + tok + "'");
                dst.push_back(*s);
            }
        };
        parse_list(fields[1], pair.text_labels);
        parse_list(fields[2], pair.image_labels);
        if (pair.text_labels.size() != pair.image_labels.size() ||
            (pair.text_labels.size() != 1 && pair.text_labels.size() != 3)) {
            throw FormatError("annotations line " + std::to_string(lineno) +
                              ": text and image must both carry 1 or 3 labels");
        }
        out.push_back(std::move(pair));
    }
    return out;
}

inline std::vector<AnnotatedPair> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open annotations file " + path.string());
    return parse_annotations(in);
}

// Applies the reconciliation rules in input order.
inline std::vector<ReconciledLabel> reconcile_all(const std::vector<AnnotatedPair>& pairs, AnnotationMode mode,
                                                  ReconcileStats* stats = nullptr) {
    std::vector<ReconciledLabel> out;
    ReconcileStats st;
    for (const auto& p : pairs) {
        const auto label = reconcile(p, mode);
        if (label) {
            ++st.kept[static_cast<std::size_t>(*label)];
            out.push_back({p.id, *label});
            continue;
        }
        ++st.discarded;
        if (mode == AnnotationMode::multi) {
            const auto t = majority_vote({p.text_labels[0], p.text_labels[1], p.text_labels[2]});
            const auto i = majority_vote({p.image_labels[0], p.image_labels[1], p.image_labels[2]});
            if (!t || !i) ++st.ambiguous_majority;
            else ++st.conflicting_majority;
        }
    }
    if (stats) *stats = st;
    return out;
}

inline std::string format_stats(const ReconcileStats& st, std::string_view dataset) {
    std::ostringstream os;
    os << "Dataset\tPositive\tNeutral\tNegative\tTotal\n";
    os << dataset << '\t' << st.kept[0] << '\t' << st.kept[1] << '\t' << st.kept[2] << '\t' << st.total() << '\n';
    os << "discarded\t" << st.discarded << '\n';
    if (st.ambiguous_majority || st.conflicting_majority) {
        os << "discarded_ambiguous_majority\t" << st.ambiguous_majority << '\n';
        os << "discarded_conflicting_majorities\t" << st.conflicting_majority << '\n';
    }
    return os.str();
}

// ---- splitting -----------------------------------------------------------

struct SplitSpec {
    std::array<std::size_t, 3> ratios{8, 1, 1}; // train : val : test
    std::uint64_t seed = 0;
};

template <typename E>
struct DatasetSplit {
    std::vector<E> train, val, test;
};

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
};

// val and test get floor(n·r/Σr); the remainder goes to train.
inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
    const std::size_t denom = spec.ratios[0] + spec.ratios[1] + spec.ratios[2];
    if (spec.ratios[0] == 0 || spec.ratios[1] == 0 || spec.ratios[2] == 0) {
        throw ConfigError("split ratios must be positive");
    }
    SplitSizes s;
    s.val = n * spec.ratios[1] / denom;
    s.test = n * spec.ratios[2] / denom;
    s.train = n - s.val - s.test;
    return s;
}

// Seeded shuffle followed by contiguous train/val/test slices.
template <typename E>
DatasetSplit<E> split_dataset(std::vector<E> examples, const SplitSpec& spec) {
    if (examples.size() < 10) throw ConfigError("split_dataset needs at least 10 examples");
    const auto sizes = split_sizes(examples.size(), spec);
    Rng rng = Rng::derive({spec.seed, 0x5b117});
    rng.shuffle(examples);
    DatasetSplit<E> out;
    auto it = std::make_move_iterator(examples.begin());
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
    it += static_cast<std::ptrdiff_t>(sizes.train);
    out.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes.val));
    it += static_cast<std::ptrdiff_t>(sizes.val);
    out.test.assign(it, std::make_move_iterator(examples.end()));
    return out;
}

// ---- paired examples -----------------------------------------------------

struct PairedExample {
    std::string image_path; // empty for generated examples
    Image image;
    std::string caption;
    std::optional<Sentiment> label;
};

// `image_path<TAB>label_or_dash<TAB>caption` per line, paths relative to
// the manifest's directory.
inline std::vector<PairedExample> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<PairedExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected image_path<TAB>label<TAB>caption");
        }
        PairedExample ex;
        ex.image_path = line.substr(0, t1);
        const auto label = line.substr(t1 + 1, t2 - t1 - 1);
        ex.caption = line.substr(t2 + 1);
        if (ex.image_path.empty()) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": empty image path");
        if (label != "-") {
            ex.label = parse_sentiment(label);
            if (!ex.label) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": unknown label '" + label + "'");
            }
        }
        const auto img_path = base / ex.image_path;
        if (!std::filesystem::exists(img_path)) throw FormatError("missing image file: " + img_path.string());
        ex.image = load_image(img_path);
        out.push_back(std::move(ex));
    }
    return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<PairedExample>& examples) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write manifest " + path.string());
    for (const auto& ex : examples) {
        os << ex.image_path << '\t' << (ex.label ? std::string(to_string(*ex.label)) : "-") << '\t' << ex.caption
           << '\n';
    }
}

// ---- synthetic data ------------------------------------------------------

struct SynthColor {
    std::string_view name;
    std::array<float, 3> rgb;
    Sentiment label; // used when the generator is asked for labels
};

inline constexpr std::array<SynthColor, 4> kSynthColors = {{
    {"red", {1.f, 0.f, 0.f}, Sentiment::negative},
    {"green", {0.f, 1.f, 0.f}, Sentiment::positive},
    {"blue", {0.f, 0.f, 1.f}, Sentiment::neutral},
    {"yellow", {1.f, 1.f, 0.f}, Sentiment::positive},
}};

inline constexpr std::array<std::string_view, 4> kQuadrants = {"top-left", "top-right", "bottom-left", "bottom-right"};

inline constexpr float kSynthBackground = 0.5f;

// One colored square filling a quadrant on a gray background, captioned
// "<color> square at <quadrant>". With `labeled`, the color fixes the label.
inline std::vector<PairedExample> synth_generate(std::size_t n, std::uint64_t seed, std::size_t image_size,
                                                 bool labeled = false) {
    if (n == 0) throw ConfigError("synth_generate needs n >= 1");
    if (image_size < 2 || image_size % 2 != 0) throw ConfigError("synthetic image size must be even");
    Rng rng = Rng::derive({seed, 0x5e7});
    std::vector<PairedExample> out;
    out.reserve(n);
    const std::size_t half = image_size / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& color = kSynthColors[rng.below(kSynthColors.size())];
        const std::size_t quad = rng.below(kQuadrants.size());
        PairedExample ex;
        ex.image = Image(image_size, image_size, kSynthBackground);
        const std::size_t y0 = (quad / 2) * half, x0 = (quad % 2) * half;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = y0; y < y0 + half; ++y)
                for (std::size_t x = x0; x < x0 + half; ++x) ex.image.at(c, y, x) = color.rgb[c];
        ex.caption = std::string(color.name) + " square at " + std::string(kQuadrants[quad]);
        if (labeled) ex.label = color.label;
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace tijepa
