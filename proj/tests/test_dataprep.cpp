#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "tijepa/dataprep.hpp"

using namespace tijepa;

namespace {

constexpr Sentiment P = Sentiment::positive, U = Sentiment::neutral, N = Sentiment::negative;

std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("tijepa_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

// Counting form of the majority rule.
std::optional<Sentiment> majority_oracle(const std::vector<Sentiment>& v) {
    std::map<Sentiment, int> count;
    for (auto s : v) ++count[s];
    for (auto [s, c] : count)
        if (c >= 2) return s;
    return std::nullopt;
}

} // namespace

TEST(Reconcile, SingleIsSymmetric) {
    for (auto a : kSentiments)
        for (auto b : kSentiments) EXPECT_EQ(reconcile_single(a, b), reconcile_single(b, a));
}

TEST(Reconcile, MajorityIsPermutationInvariant) {
    for (auto a : kSentiments)
        for (auto b : kSentiments)
            for (auto c : kSentiments) {
                const auto m = majority_vote({a, b, c});
                EXPECT_EQ(majority_vote({b, c, a}), m);
                EXPECT_EQ(majority_vote({c, a, b}), m);
                EXPECT_EQ(majority_vote({b, a, c}), m);
                EXPECT_EQ(m, majority_oracle({a, b, c}));
            }
}

TEST(Reconcile, MultiExamples) {
    EXPECT_EQ(reconcile_multi({"1", {P, P, N}, {P, U, U}}), P);
    EXPECT_EQ(reconcile_multi({"2", {N, N, N}, {U, U, P}}), N);
    EXPECT_EQ(reconcile_multi({"3", {P, U, N}, {P, P, P}}), std::nullopt);
    EXPECT_EQ(reconcile_multi({"4", {P, P, U}, {N, N, P}}), std::nullopt);
    EXPECT_EQ(reconcile_multi({"5", {U, U, P}, {U, N, U}}), U);
    EXPECT_THROW(reconcile_multi({"6", {P}, {P}}), FormatError);
    EXPECT_THROW(reconcile({"7", {P, P, P}, {P, P, P}}, AnnotationMode::single), FormatError);
}

TEST(Reconcile, StatsOnBruteForceCorpus) {
    // every combination of three text and three image labels
    std::vector<AnnotatedPair> pairs;
    std::vector<Sentiment> all(kSentiments.begin(), kSentiments.end());
    for (auto t0 : all)
        for (auto t1 : all)
            for (auto t2 : all)
                for (auto i0 : all)
                    for (auto i1 : all)
                        for (auto i2 : all)
                            pairs.push_back({std::to_string(pairs.size()), {t0, t1, t2}, {i0, i1, i2}});
    ReconcileStats st;
    const auto kept = reconcile_all(pairs, AnnotationMode::multi, &st);

    std::array<std::size_t, 3> expect_kept{};
    std::size_t ambiguous = 0, conflicting = 0;
    for (const auto& p : pairs) {
        const auto t = majority_oracle(p.text_labels), i = majority_oracle(p.image_labels);
        if (!t || !i) {
            ++ambiguous;
            continue;
        }
        if ((*t == P && *i == N) || (*t == N && *i == P)) {
            ++conflicting;
            continue;
        }
        ++expect_kept[static_cast<std::size_t>(*t == U ? *i : *t)];
    }
    EXPECT_EQ(st.kept, expect_kept);
    EXPECT_EQ(st.ambiguous_majority, ambiguous);
    EXPECT_EQ(st.conflicting_majority, conflicting);
    EXPECT_EQ(st.discarded, ambiguous + conflicting);
    EXPECT_EQ(kept.size() + st.discarded, pairs.size());
    for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_LT(std::stoul(kept[i - 1].id), std::stoul(kept[i].id));
}

TEST(Annotations, ParseAndErrors) {
    std::istringstream ok("# header\n1\tpositive\tneutral\r\n2\tnegative,negative,positive\tneutral,neutral,neutral\n");
    const auto pairs = parse_annotations(ok);
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].id, "1");
    EXPECT_EQ(pairs[0].image_labels, (std::vector<Sentiment>{U}));
    EXPECT_EQ(pairs[1].text_labels.size(), 3u);

    std::istringstream two_fields("1\tpositive\n");
    try {
        parse_annotations(two_fields);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
    std::istringstream bad_label("1\thappy\tneutral\n");
    EXPECT_THROW(parse_annotations(bad_label), FormatError);
    std::istringstream uneven("1\tpositive,positive,positive\tneutral\n");
    EXPECT_THROW(parse_annotations(uneven), FormatError);
    EXPECT_THROW(load_annotations("/nonexistent/a.tsv"), FormatError);
}

TEST(Split, SizesAndPartition) {
    const auto s100 = split_sizes(100, {});
    EXPECT_EQ(s100.train, 80u);
    EXPECT_EQ(s100.val, 10u);
    EXPECT_EQ(s100.test, 10u);
    const auto s = split_sizes(4511, {});
    EXPECT_EQ(s.train, 3609u);
    EXPECT_EQ(s.val, 451u);
    EXPECT_EQ(s.test, 451u);

    std::vector<int> items(4511);
    for (int i = 0; i < 4511; ++i) items[i] = i;
    const auto sp = split_dataset(items, {{8, 1, 1}, 3});
    std::set<int> seen;
    for (const auto* part : {&sp.train, &sp.val, &sp.test})
        for (int v : *part) EXPECT_TRUE(seen.insert(v).second);
    EXPECT_EQ(seen.size(), 4511u);
    EXPECT_EQ(sp.train.size(), 3609u);

    const auto again = split_dataset(items, {{8, 1, 1}, 3});
    EXPECT_EQ(again.test, sp.test);
    const auto other = split_dataset(items, {{8, 1, 1}, 4});
    EXPECT_NE(other.test, sp.test);

    EXPECT_THROW(split_dataset(std::vector<int>(9), {}), ConfigError);
    EXPECT_THROW(split_sizes(100, {{8, 0, 1}, 0}), ConfigError);
}

TEST(Manifest, RoundTripAndErrors) {
    const auto dir = temp_dir("manifest");
    auto data = synth_generate(3, 1, 8, true);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i].image_path = "img" + std::to_string(i) + ".ppm";
        write_ppm(dir / data[i].image_path, data[i].image);
    }
    data[2].label.reset();
    write_manifest(dir / "m.tsv", data);
    const auto back = load_manifest(dir / "m.tsv");
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].caption, data[i].caption);
        EXPECT_EQ(back[i].label, data[i].label);
        ASSERT_EQ(back[i].image.values.size(), data[i].image.values.size());
        for (std::size_t k = 0; k < data[i].image.values.size(); ++k)
            EXPECT_NEAR(back[i].image.values[k], data[i].image.values[k], 0.5 / 255 + 1e-6);
    }

    std::ofstream(dir / "two.tsv") << "img0.ppm\tpositive\tcaption\nimg1.ppm\tpositive\n";
    try {
        load_manifest(dir / "two.tsv");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
    std::ofstream(dir / "missing.tsv") << "nope.ppm\t-\tcaption\n";
    try {
        load_manifest(dir / "missing.tsv");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("nope.ppm"), std::string::npos);
    }
    std::ofstream(dir / "label.tsv") << "img0.ppm\thappy\tcaption\n";
    EXPECT_THROW(load_manifest(dir / "label.tsv"), FormatError);
}

TEST(Synth, ImageMatchesCaption) {
    const auto data = synth_generate(256, 0, 16, true);
    std::set<std::string> captions;
    for (const auto& ex : data) {
        captions.insert(ex.caption);
        const SynthColor* color = nullptr;
        for (const auto& c : kSynthColors)
            if (ex.caption.rfind(std::string(c.name) + " ", 0) == 0) color = &c;
        ASSERT_NE(color, nullptr);
        std::size_t quad = 4;
        for (std::size_t q = 0; q < 4; ++q)
            if (ex.caption.ends_with(std::string(kQuadrants[q]))) quad = q;
        ASSERT_LT(quad, 4u);
        EXPECT_EQ(ex.label, color->label);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const bool inside = (y / 8) == quad / 2 && (x / 8) == quad % 2;
                for (std::size_t c = 0; c < 3; ++c)
                    EXPECT_EQ(ex.image.at(c, y, x), inside ? color->rgb[c] : kSynthBackground);
            }
    }
    EXPECT_EQ(captions.size(), 16u);
}

TEST(Synth, DeterministicAndValidated) {
    const auto a = synth_generate(20, 5, 8);
    const auto b = synth_generate(20, 5, 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].caption, b[i].caption);
        EXPECT_FALSE(a[i].label);
    }
    EXPECT_THROW(synth_generate(0, 0, 8), ConfigError);
    EXPECT_THROW(synth_generate(4, 0, 7), ConfigError);
}

TEST(Stats, Format) {
    ReconcileStats st;
    st.kept = {2, 1, 3};
    st.discarded = 4;
    EXPECT_EQ(format_stats(st, "MVSA-Single"),
              "Dataset\tPositive\tNeutral\tNegative\tTotal\nMVSA-Single\t2\t1\t3\t6\ndiscarded\t4\n");
}
