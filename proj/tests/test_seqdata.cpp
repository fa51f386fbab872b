#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_support.hpp"
#include "tfbs/seqdata.hpp"

using namespace tfbs;
using namespace tfbs::seqdata;

namespace {

// Every sequence of the same length that starts with seq[0] and uses each
// overlapping dinucleotide of seq exactly as often: the Euler paths of the
// dinucleotide multigraph starting at the first base.
std::set<std::string> euler_paths(const std::string& seq) {
    std::array<std::array<int, 4>, 4> edges{};
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++edges[base_code(seq[i])][base_code(seq[i + 1])];
    std::set<std::string> out;
    std::string path(1, seq[0]);
    std::function<void()> walk = [&] {
        if (path.size() == seq.size()) {
            out.insert(path);
            return;
        }
        const int cur = base_code(path.back());
        for (int b = 0; b < 4; ++b) {
            if (edges[cur][b] == 0) continue;
            --edges[cur][b];
            path.push_back(kBases[b]);
            walk();
            path.pop_back();
            ++edges[cur][b];
        }
    };
    walk();
    return out;
}

std::string random_acgt(std::mt19937_64& rng, std::size_t len) {
    std::uniform_int_distribution<int> b(0, 3);
    std::string s(len, 'A');
    for (auto& c : s) c = kBases[std::size_t(b(rng))];
    return s;
}

Dataset dataset_of(std::vector<std::pair<std::string, int>> rows) {
    Dataset d;
    std::size_t i = 0;
    for (auto& [bases, label] : rows) d.records.push_back({{"r" + std::to_string(i++), bases}, label});
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary and tokenization

TEST(Vocab, SizesAndDeterminism) {
    EXPECT_EQ(build_vocab(3).size(), 66u);
    EXPECT_EQ(build_vocab(5).size(), 1026u);
    EXPECT_EQ(build_vocab(6).size(), 4098u);
    EXPECT_EQ(build_vocab(5).token_to_id(), build_vocab(5).token_to_id());
    EXPECT_THROW(build_vocab(2), ConfigError);
    EXPECT_THROW(build_vocab(7), ConfigError);
}

TEST(Vocab, BijectionWithSpecialsFirstAndLexicographicOrder) {
    const auto vocab = build_vocab(3);
    const auto map = vocab.token_to_id();
    EXPECT_EQ(map.size(), vocab.size());
    std::set<std::int32_t> ids;
    for (const auto& [tok, id] : map) {
        ids.insert(id);
        EXPECT_EQ(vocab.token(id), tok);
    }
    EXPECT_EQ(ids.size(), vocab.size());
    EXPECT_EQ(*ids.begin(), 0);
    EXPECT_EQ(*ids.rbegin(), std::int32_t(vocab.size() - 1));
    EXPECT_EQ(map.at("[PAD]"), KmerVocab::kPad);
    EXPECT_EQ(map.at("[PAD]"), 0);
    EXPECT_EQ(map.at("[UNK]"), 1);
    EXPECT_EQ(map.at("AAA"), 2);
    EXPECT_EQ(map.at("AAC"), 3);
    EXPECT_EQ(map.at("TTT"), 65);
    for (std::int32_t id = 3; std::size_t(id) < vocab.size(); ++id)
        EXPECT_LT(vocab.token(id - 1), vocab.token(id));
}

TEST(Tokenize, WorkedExamples) {
    const auto v3 = build_vocab(3);
    DnaSequence s{"s", "ACGTAC"};
    std::vector<std::int32_t> expect{v3.id_of("ACG"), v3.id_of("CGT"), v3.id_of("GTA"), v3.id_of("TAC")};
    EXPECT_EQ(tokenize(s, v3), expect);

    std::mt19937_64 rng(1);
    DnaSequence long_seq{"l", random_acgt(rng, 101)};
    EXPECT_EQ(tokenize(long_seq, build_vocab(5)).size(), 97u);

    const KmerVocab v2(2);
    EXPECT_EQ(tokenize(DnaSequence{"n", "ANGT"}, v2),
              (std::vector<std::int32_t>{KmerVocab::kUnk, KmerVocab::kUnk, v2.id_of("GT")}));
}

TEST(Tokenize, ShorterThanKIsDataError) {
    EXPECT_THROW(tokenize(DnaSequence{"s", "ACGT"}, build_vocab(5)), DataError);
}

TEST(Tokenize, LengthLawAndRoundTrip) {
    std::mt19937_64 rng(2);
    for (std::size_t k = 3; k <= 6; ++k) {
        const auto vocab = build_vocab(k);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t len = k + rng() % 60;
            DnaSequence s{"s", random_acgt(rng, len)};
            const auto ids = tokenize(s, vocab);
            ASSERT_EQ(ids.size(), len - k + 1);
            std::string rebuilt = vocab.token(ids[0]);
            for (std::size_t i = 1; i < ids.size(); ++i) rebuilt += vocab.token(ids[i]).back();
            EXPECT_EQ(rebuilt, s.bases);
            for (auto id : ids) EXPECT_LT(std::size_t(id), vocab.size());
        }
    }
}

TEST(Tokenize, BatchRequiresEqualLengths) {
    auto d = dataset_of({{"ACGTACGT", 1}, {"TTTTCCCC", 0}});
    auto batch = tokenize_batch(d, build_vocab(3));
    EXPECT_EQ(batch.batch, 2u);
    EXPECT_EQ(batch.tokens, 6u);
    EXPECT_EQ(batch.token_ids.size(), 12u);
    EXPECT_EQ(batch.labels, (std::vector<int>{1, 0}));
    d.records.push_back({{"odd", "ACGTA"}, 1});
    EXPECT_THROW(tokenize_batch(d, build_vocab(3)), DataError);
}

// ---------------------------------------------------------------------------
// Records

TEST(Records, ValidationRules) {
    EXPECT_THROW(validate(DnaSequence{"", "ACGT"}), DataError);
    EXPECT_THROW(validate(DnaSequence{"x", ""}), DataError);
    EXPECT_THROW(validate(DnaSequence{"x", "ACGU"}), DataError);
    EXPECT_NO_THROW(validate(DnaSequence{"x", "ACGTN"}));
    auto d = dataset_of({{"ACGT", 1}, {"ACGT", 0}});
    d.records[1].sequence.id = d.records[0].sequence.id;
    EXPECT_THROW(validate(d), DataError);
    auto bad_label = dataset_of({{"ACGT", 2}});
    EXPECT_THROW(validate(bad_label), DataError);
}

// ---------------------------------------------------------------------------
// Dinucleotide shuffle

TEST(Shuffle, UniqueEulerPathExamples) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        EXPECT_EQ(dinucleotide_shuffle({"a", "AATT"}, seed).bases, "AATT");
        EXPECT_EQ(dinucleotide_shuffle({"b", "ACAC"}, seed).bases, "ACAC");
    }
}

TEST(Shuffle, ThreePathExampleReachesEveryPath) {
    // AA twice, AC, CA from A to A: AAACA is a valid path alongside the other two.
    const std::set<std::string> allowed{"AAACA", "AACAA", "ACAAA"};
    EXPECT_EQ(euler_paths("AACAA"), allowed);
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto out = dinucleotide_shuffle({"c", "AACAA"}, seed).bases;
        EXPECT_TRUE(allowed.count(out)) << out;
        seen.insert(out);
    }
    EXPECT_EQ(seen, allowed);
}

TEST(Shuffle, ConservesDinucleotidesAndEndpoints) {
    std::mt19937_64 rng(20240501);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t len = 10 + rng() % 191;
        const std::string s = random_acgt(rng, len);
        const auto out = dinucleotide_shuffle({"s", s}, rng()).bases;
        ASSERT_EQ(out.size(), s.size());
        EXPECT_EQ(dinucleotide_counts(out), dinucleotide_counts(s));
        EXPECT_EQ(out.front(), s.front());
        EXPECT_EQ(out.back(), s.back());
    }
}

TEST(Shuffle, OutputsAreEulerPathsForShortInputs) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t len = 2 + rng() % 11;  // 2..12
        const std::string s = random_acgt(rng, len);
        const auto paths = euler_paths(s);
        ASSERT_TRUE(paths.count(s));
        for (int rep = 0; rep < 5; ++rep) {
            const auto out = dinucleotide_shuffle({"s", s}, rng()).bases;
            EXPECT_TRUE(paths.count(out)) << s << " -> " << out;
        }
    }
}

TEST(Shuffle, CoversEveryEulerPathOfSmallInputs) {
    for (const std::string s : {"ACGTACGA", "AACCGGTTAC", "GATTACAGAT"}) {
        const auto paths = euler_paths(s);
        std::set<std::string> seen;
        for (std::uint64_t seed = 0; seed < 3000 && seen.size() < paths.size(); ++seed)
            seen.insert(dinucleotide_shuffle({"s", s}, seed).bases);
        EXPECT_EQ(seen, paths) << s;
    }
}

TEST(Shuffle, DeterministicGivenSeed) {
    std::mt19937_64 rng(3);
    const std::string s = random_acgt(rng, 101);
    EXPECT_EQ(dinucleotide_shuffle({"s", s}, 9).bases, dinucleotide_shuffle({"s", s}, 9).bases);
}

TEST(Shuffle, RejectsNAndShortInputs) {
    EXPECT_THROW(dinucleotide_shuffle({"s", "ACNGT"}, 1), UnsupportedInputError);
    EXPECT_THROW(dinucleotide_shuffle({"s", "A"}, 1), DataError);
}

TEST(Negatives, OnePerPositiveWithMatchingCounts) {
    std::mt19937_64 rng(4);
    Dataset pos;
    for (int i = 0; i < 10; ++i) pos.records.push_back({{"p" + std::to_string(i), random_acgt(rng, 101)}, 1});
    const auto neg = generate_negatives(pos, 5);
    ASSERT_EQ(neg.size(), 10u);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(neg.records[i].label, 0);
        EXPECT_EQ(dinucleotide_counts(neg.records[i].sequence.bases),
                  dinucleotide_counts(pos.records[i].sequence.bases));
        ids.insert(neg.records[i].sequence.id);
        ids.insert(pos.records[i].sequence.id);
    }
    EXPECT_EQ(ids.size(), 20u);
    const auto again = generate_negatives(pos, 5);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(again.records[i].sequence.bases, neg.records[i].sequence.bases);
}

TEST(Negatives, RequiresPositiveLabels) {
    auto d = dataset_of({{"ACGTACGT", 0}});
    EXPECT_THROW(generate_negatives(d, 1), DataError);
}

// ---------------------------------------------------------------------------
// Splits

TEST(Split, SizesPartitionAndDeterminism) {
    Dataset d;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 100; ++i) d.records.push_back({{"r" + std::to_string(i), random_acgt(rng, 20)}, i % 2});
    const auto s = split(d, {0.8, 0.1, 0.1}, 11);
    EXPECT_EQ(s.train.size(), 80u);
    EXPECT_EQ(s.val.size(), 10u);
    EXPECT_EQ(s.test.size(), 10u);
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (const auto& r : part->records) EXPECT_TRUE(ids.insert(r.sequence.id).second);
    EXPECT_EQ(ids.size(), 100u);
    for (const auto* part : {&s.train, &s.val, &s.test}) {
        long pos = 0;
        for (const auto& r : part->records) pos += r.label;
        EXPECT_LE(std::abs(2 * pos - long(part->size())), 2);  // 50/50 within one record
    }
    const auto again = split(d, {0.8, 0.1, 0.1}, 11);
    for (std::size_t i = 0; i < s.train.size(); ++i)
        EXPECT_EQ(again.train.records[i].sequence.id, s.train.records[i].sequence.id);
}

TEST(Split, StratifiedRatioOnUnbalancedData) {
    Dataset d;
    for (int i = 0; i < 90; ++i) d.records.push_back({{"r" + std::to_string(i), "ACGT"}, i < 30 ? 1 : 0});
    const auto s = split(d, {0.6, 0.2, 0.2}, 3);
    for (const auto* part : {&s.train, &s.val, &s.test}) {
        double pos = 0;
        for (const auto& r : part->records) pos += r.label;
        EXPECT_LE(std::abs(pos - double(part->size()) / 3.0), 1.0);
    }
}

TEST(Split, Errors) {
    Dataset empty;
    EXPECT_THROW(split(empty, {}, 1), DataError);
    auto d = dataset_of({{"ACGT", 1}, {"ACGT", 0}});
    d.records[1].sequence.id = "other";
    EXPECT_THROW(split(d, {0.5, 0.3, 0.3}, 1), ConfigError);
    EXPECT_THROW(split(d, {1.0, 0.0, 0.0}, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Cross-cell construction

namespace {
TfRecords bound(const std::string& tf, std::size_t n_train, std::size_t n_test, std::mt19937_64& rng) {
    TfRecords r;
    for (std::size_t i = 0; i < n_train; ++i)
        r.train.records.push_back({{tf + "_tr" + std::to_string(i), random_acgt(rng, 30)}, 1});
    for (std::size_t i = 0; i < n_test; ++i)
        r.test.records.push_back({{tf + "_te" + std::to_string(i), random_acgt(rng, 30)}, 1});
    return r;
}

std::string tf_of(const LabeledRecord& r) { return r.sequence.id.substr(0, r.sequence.id.find('|')); }
}  // namespace

TEST(CrossCell, BalancedWithEveryOtherTfRepresented) {
    std::mt19937_64 rng(6);
    std::map<std::string, TfRecords> corpus;
    corpus["CTCF"] = bound("CTCF", 100, 20, rng);
    corpus["A"] = bound("A", 100, 10, rng);
    corpus["B"] = bound("B", 100, 10, rng);
    corpus["C"] = bound("C", 100, 10, rng);
    const auto sets = make_cross_cell(corpus, "CTCF", 3);
    std::map<std::string, int> neg_by_tf;
    std::size_t pos = 0;
    for (const auto& r : sets.train.records) {
        if (r.label == 1) {
            ++pos;
            EXPECT_EQ(tf_of(r), "CTCF");
        } else {
            ++neg_by_tf[tf_of(r)];
        }
    }
    EXPECT_EQ(pos, 100u);
    EXPECT_EQ(sets.train.size(), 200u);
    EXPECT_EQ(neg_by_tf.size(), 3u);
    for (const auto& [tf, n] : neg_by_tf) EXPECT_GE(n, 1) << tf;
    EXPECT_NO_THROW(validate(sets.train));
    // Test: target held-out against all other held-out records.
    EXPECT_EQ(sets.test.size(), 50u);
    EXPECT_NO_THROW(validate(sets.test));
}

TEST(CrossCell, CoverageHoldsEvenWhenOneTfIsTiny) {
    std::mt19937_64 rng(7);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::map<std::string, TfRecords> corpus;
        corpus["T"] = bound("T", 5, 1, rng);
        corpus["big"] = bound("big", 500, 1, rng);
        corpus["one"] = bound("one", 1, 1, rng);
        const auto sets = make_cross_cell(corpus, "T", seed);
        std::set<std::string> tfs;
        for (const auto& r : sets.train.records)
            if (r.label == 0) tfs.insert(tf_of(r));
        EXPECT_EQ(tfs, (std::set<std::string>{"big", "one"}));
    }
}

TEST(CrossCell, SingleOtherTfAndErrors) {
    std::mt19937_64 rng(8);
    std::map<std::string, TfRecords> corpus;
    corpus["T"] = bound("T", 10, 2, rng);
    corpus["U"] = bound("U", 15, 2, rng);
    const auto sets = make_cross_cell(corpus, "T", 1);
    for (const auto& r : sets.train.records)
        if (r.label == 0) {
            EXPECT_EQ(tf_of(r), "U");
        }
    EXPECT_THROW(make_cross_cell(corpus, "missing", 1), DataError);
    corpus["U"] = bound("U", 5, 2, rng);
    EXPECT_THROW(make_cross_cell(corpus, "T", 1), DataError);  // 5 candidates for 10 positives
    std::map<std::string, TfRecords> alone{{"T", bound("T", 3, 1, rng)}};
    EXPECT_THROW(make_cross_cell(alone, "T", 1), DataError);
}

TEST(CrossCell, HoldoutSplitPartitionsEachTf) {
    std::mt19937_64 rng(9);
    std::map<std::string, Dataset> per_tf;
    for (const std::string tf : {"X", "Y"}) {
        Dataset d;
        for (int i = 0; i < 40; ++i) d.records.push_back({{tf + std::to_string(i), random_acgt(rng, 20)}, 1});
        per_tf[tf] = d;
    }
    const auto parts = holdout_split(per_tf, 0.25, 4);
    for (const auto& [tf, rec] : parts) {
        EXPECT_EQ(rec.test.size(), 10u);
        EXPECT_EQ(rec.train.size(), 30u);
    }
    EXPECT_THROW(holdout_split(per_tf, 1.0, 4), ConfigError);
}

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synth, ConstructionContract) {
    const auto d = synth_motif_dataset(200, 101, "TATAATGC", 7);
    ASSERT_EQ(d.size(), 200u);
    std::size_t pos = 0;
    for (const auto& r : d.records) {
        EXPECT_EQ(r.sequence.length(), 101u);
        if (r.label == 1) {
            ++pos;
            EXPECT_NE(r.sequence.bases.find("TATAATGC"), std::string::npos);
        }
    }
    EXPECT_EQ(pos, 100u);
    const auto again = synth_motif_dataset(200, 101, "TATAATGC", 7);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(again.records[i].sequence.bases, d.records[i].sequence.bases);
    EXPECT_THROW(synth_motif_dataset(10, 20, "TATN", 1), DataError);
    EXPECT_THROW(synth_motif_dataset(11, 20, "TATA", 1), ConfigError);
    EXPECT_THROW(synth_motif_dataset(10, 4, "TATA", 1), ConfigError);
}

// ---------------------------------------------------------------------------
// File formats

TEST(Formats, TsvRoundTripSkipsComments) {
    std::istringstream in("# header\nr1\tacgt\t1\n\nr2\tTTGA\t0\n");
    const auto d = read_tsv(in);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.records[0].sequence.bases, "ACGT");
    std::ostringstream out;
    write_tsv(out, d);
    EXPECT_EQ(out.str(), "r1\tACGT\t1\nr2\tTTGA\t0\n");
}

TEST(Formats, TsvErrors) {
    std::istringstream two_fields("r1\tACGT\n");
    EXPECT_THROW(read_tsv(two_fields), FormatError);
    std::istringstream bad_label("r1\tACGT\t2\n");
    EXPECT_THROW(read_tsv(bad_label), FormatError);
    std::istringstream dup("r1\tACGT\t1\nr1\tACGT\t0\n");
    EXPECT_THROW(read_tsv(dup), DataError);
}

TEST(Formats, FastaWithLabels) {
    std::istringstream in(">a label=1\nACGT\nacgt\n>b extra label=0\nTTTT\n");
    const auto d = read_fasta(in);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.records[0].sequence.bases, "ACGTACGT");
    EXPECT_EQ(d.records[0].label, 1);
    EXPECT_EQ(d.records[1].label, 0);
    std::istringstream no_label(">a\nACGT\n");
    EXPECT_THROW(read_fasta(no_label), FormatError);
    std::istringstream orphan("ACGT\n>a label=1\nAC\n");
    EXPECT_THROW(read_fasta(orphan), FormatError);
}

TEST(Formats, LoadDatasetDetectsFormat) {
    tfbs::testing::TempDir dir("seqdata");
    {
        std::ofstream f(dir.file("x.fa"));
        f << ">a label=1\nACGT\n";
    }
    EXPECT_EQ(load_dataset(dir.file("x.fa")).records[0].sequence.bases, "ACGT");
    const auto d = synth_motif_dataset(4, 12, "ACG", 1);
    save_dataset(dir.file("x.tsv"), d);
    const auto back = load_dataset(dir.file("x.tsv"));
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.records[i].sequence.bases, d.records[i].sequence.bases);
    EXPECT_THROW(load_dataset(dir.file("missing.tsv")), DataError);
}
