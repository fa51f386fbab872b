#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tfbs/errors.hpp"

namespace tfbs::seqdata {

inline constexpr std::array<char, 4> kBases{'A', 'C', 'G', 'T'};

// A=0, C=1, G=2, T=3; -1 for N; -2 for anything else.
inline int base_code(char c) {
    switch (c) {
        case 'A': return 0;
        case 'C': return 1;
        case 'G': return 2;
        case 'T': return 3;
        case 'N': return -1;
        default: return -2;
    }
}

struct DnaSequence {
    std::string id;
    std::string bases;

    std::size_t length() const { return bases.size(); }
};

// Throws DataError unless the sequence is non-empty over {A,C,G,T,N} with an id.
inline void validate(const DnaSequence& seq) {
    if (seq.id.empty()) throw DataError("sequence without an id");
    if (seq.bases.empty()) throw DataError("sequence '" + seq.id + "' is empty");
    for (char c : seq.bases)
        if (base_code(c) == -2)
            throw DataError("sequence '" + seq.id + "' contains invalid base '" + std::string(1, c) + "'");
}

struct LabeledRecord {
    DnaSequence sequence;
    int label = 0;
};

struct Dataset {
    std::vector<LabeledRecord> records;
    std::string source;
    std::string cell_line;
    std::string tf;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    std::size_t count_label(int label) const {
        return std::size_t(std::count_if(records.begin(), records.end(),
                                         [&](const LabeledRecord& r) { return r.label == label; }));
    }
};

inline void validate(const Dataset& data) {
    std::unordered_set<std::string> ids;
    for (const auto& r : data.records) {
        validate(r.sequence);
        if (r.label != 0 && r.label != 1)
            throw DataError("record '" + r.sequence.id + "' has label outside {0,1}");
        if (!ids.insert(r.sequence.id).second)
            throw DataError("duplicate record id '" + r.sequence.id + "'");
    }
}

// ---------------------------------------------------------------------------
// k-mer vocabulary and tokenization

class KmerVocab {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static constexpr std::size_t kSpecials = 2;
    // Supported model range; the class itself accepts 1..8 so that short
    // k-mers can be used for inspection.
    static constexpr std::size_t kMinK = 3;
    static constexpr std::size_t kMaxK = 6;

    explicit KmerVocab(std::size_t k) : k_(k) {
        if (k < 1 || k > 8) throw ConfigError("k-mer length must lie in [1,8], got " + std::to_string(k));
    }

    std::size_t k() const { return k_; }
    std::size_t size() const { return (std::size_t{1} << (2 * k_)) + kSpecials; }

    // Id of a k-mer string, UNK if it contains N; throws on other characters.
    std::int32_t id_of(std::string_view kmer) const {
        if (kmer.size() != k_) throw DataError("token length differs from k");
        std::int32_t code = 0;
        for (char c : kmer) {
            const int b = base_code(c);
            if (b == -1) return kUnk;
            if (b < 0) throw DataError("invalid base '" + std::string(1, c) + "' in k-mer");
            code = code * 4 + b;
        }
        return code + std::int32_t(kSpecials);
    }

    std::string token(std::int32_t id) const {
        if (id == kPad) return "[PAD]";
        if (id == kUnk) return "[UNK]";
        if (id < 0 || std::size_t(id) >= size()) throw DataError("token id out of range");
        std::string s(k_, 'A');
        std::int32_t code = id - std::int32_t(kSpecials);
        for (std::size_t i = k_; i-- > 0;) {
            s[i] = kBases[std::size_t(code & 3)];
            code >>= 2;
        }
        return s;
    }

    // Full token -> id table, specials first then k-mers in A<C<G<T order.
    std::map<std::string, std::int32_t> token_to_id() const {
        std::map<std::string, std::int32_t> m;
        for (std::int32_t id = 0; std::size_t(id) < size(); ++id) m[token(id)] = id;
        return m;
    }

private:
    std::size_t k_;
};

inline KmerVocab build_vocab(std::size_t k) {
    if (k < KmerVocab::kMinK || k > KmerVocab::kMaxK)
        throw ConfigError("k must lie in [3,6], got " + std::to_string(k));
    return KmerVocab(k);
}

// Stride-1 sliding window: L-k+1 ids, any window touching N maps to UNK.
inline std::vector<std::int32_t> tokenize(const DnaSequence& seq, const KmerVocab& vocab) {
    const std::size_t k = vocab.k();
    if (seq.length() < k)
        throw DataError("sequence '" + seq.id + "' of length " + std::to_string(seq.length()) +
                        " is shorter than k=" + std::to_string(k));
    std::vector<std::int32_t> ids;
    ids.reserve(seq.length() - k + 1);
    const std::string_view view(seq.bases);
    for (std::size_t i = 0; i + k <= seq.length(); ++i) ids.push_back(vocab.id_of(view.substr(i, k)));
    return ids;
}

struct TokenizedBatch {
    std::vector<std::int32_t> token_ids;  // row-major (batch, tokens)
    std::vector<int> labels;
    std::size_t batch = 0;
    std::size_t tokens = 0;
};

// Tokenizes the records at `indices` (all of them when empty). All
// sequences must share one length.
inline TokenizedBatch tokenize_batch(const Dataset& data, const KmerVocab& vocab,
                                     const std::vector<std::size_t>& indices = {}) {
    std::vector<std::size_t> idx = indices;
    if (idx.empty()) {
        idx.resize(data.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    TokenizedBatch out;
    out.batch = idx.size();
    for (std::size_t i : idx) {
        if (i >= data.size()) throw DataError("record index out of range");
        const auto& rec = data.records[i];
        auto ids = tokenize(rec.sequence, vocab);
        if (out.token_ids.empty()) out.tokens = ids.size();
        if (ids.size() != out.tokens)
            throw DataError("batch mixes sequence lengths; record '" + rec.sequence.id + "' differs");
        out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
        out.labels.push_back(rec.label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dinucleotide-preserving shuffle

using DinucleotideCounts = std::array<std::size_t, 16>;

inline DinucleotideCounts dinucleotide_counts(std::string_view bases) {
    DinucleotideCounts counts{};
    for (std::size_t i = 0; i + 1 < bases.size(); ++i) {
        const int a = base_code(bases[i]), b = base_code(bases[i + 1]);
        if (a >= 0 && b >= 0) ++counts[std::size_t(a * 4 + b)];
    }
    return counts;
}

// Euler-path shuffle (Altschul & Erickson): pick a random last exit edge for
// every vertex except the final base so that the last edges form a tree
// rooted at the final base, shuffle the remaining exits, then walk. The
// result has exactly the input's dinucleotide multiset and endpoints.
inline DnaSequence dinucleotide_shuffle(const DnaSequence& seq, std::uint64_t seed) {
    if (seq.length() < 2) throw DataError("shuffle requires at least 2 bases");
    for (char c : seq.bases) {
        const int b = base_code(c);
        if (b == -1) throw UnsupportedInputError("shuffle input '" + seq.id + "' contains N");
        if (b < 0) throw DataError("shuffle input '" + seq.id + "' contains invalid base");
    }
    std::array<std::vector<int>, 4> exits;
    for (std::size_t i = 0; i + 1 < seq.length(); ++i)
        exits[std::size_t(base_code(seq.bases[i]))].push_back(base_code(seq.bases[i + 1]));
    const int first = base_code(seq.bases.front());
    const int last = base_code(seq.bases.back());

    std::mt19937_64 rng(seed);
    std::array<std::size_t, 4> last_exit{};
    for (;;) {
        for (int v = 0; v < 4; ++v)
            if (v != last && !exits[v].empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, exits[v].size() - 1);
                last_exit[v] = pick(rng);
            }
        bool tree = true;
        for (int v = 0; v < 4 && tree; ++v) {
            if (v == last || exits[v].empty()) continue;
            int u = v;
            int steps = 0;
            while (u != last && steps++ < 4) u = exits[u][last_exit[u]];
            tree = u == last;
        }
        if (tree) break;
    }
    for (int v = 0; v < 4; ++v) {
        auto& e = exits[v];
        if (e.empty()) continue;
        if (v != last) {
            std::swap(e[last_exit[v]], e.back());
            std::shuffle(e.begin(), e.end() - 1, rng);
        } else {
            std::shuffle(e.begin(), e.end(), rng);
        }
    }
    DnaSequence out{seq.id, std::string()};
    out.bases.reserve(seq.length());
    std::array<std::size_t, 4> next{};
    int cur = first;
    out.bases.push_back(kBases[std::size_t(cur)]);
    for (std::size_t i = 1; i < seq.length(); ++i) {
        cur = exits[std::size_t(cur)][next[std::size_t(cur)]++];
        out.bases.push_back(kBases[std::size_t(cur)]);
    }
    return out;
}

// One shuffled negative per positive; ids gain a "_shuf" suffix.
inline Dataset generate_negatives(const Dataset& positives, std::uint64_t seed) {
    Dataset out;
    out.source = positives.source;
    out.cell_line = positives.cell_line;
    out.tf = positives.tf;
    std::unordered_set<std::string> taken;
    for (const auto& r : positives.records) taken.insert(r.sequence.id);
    std::uint64_t stream = 0;
    for (const auto& r : positives.records) {
        if (r.label != 1)
            throw DataError("generate_negatives expects positives only; '" + r.sequence.id +
                            "' is labeled " + std::to_string(r.label));
        const std::uint64_t s = std::mt19937_64(seed ^ (0x9E3779B97F4A7C15ull * ++stream))();
        DnaSequence shuffled = dinucleotide_shuffle(r.sequence, s);
        std::string id = r.sequence.id + "_shuf";
        while (!taken.insert(id).second) id += "_";
        shuffled.id = std::move(id);
        out.records.push_back({std::move(shuffled), 0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    Dataset train;
    Dataset val;
    Dataset test;
};

inline DatasetSplit split(const Dataset& data, SplitFractions f, std::uint64_t seed,
                          bool stratify = true) {
    if (data.empty()) throw DataError("cannot split an empty dataset");
    if (!(f.train > 0 && f.val > 0 && f.test > 0))
        throw ConfigError("split fractions must be positive");
    if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> groups;
    if (stratify) {
        groups.resize(2);
        for (std::size_t i = 0; i < data.size(); ++i)
            groups[data.records[i].label ? 1 : 0].push_back(i);
    } else {
        groups.emplace_back(data.size());
        std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
    }
    std::vector<std::size_t> parts[3];
    for (auto& g : groups) {
        std::shuffle(g.begin(), g.end(), rng);
        const std::size_t n = g.size();
        const std::size_t n_train = std::min(n, std::size_t(std::llround(f.train * double(n))));
        const std::size_t n_val = std::min(n - n_train, std::size_t(std::llround(f.val * double(n))));
        parts[0].insert(parts[0].end(), g.begin(), g.begin() + std::ptrdiff_t(n_train));
        parts[1].insert(parts[1].end(), g.begin() + std::ptrdiff_t(n_train),
                        g.begin() + std::ptrdiff_t(n_train + n_val));
        parts[2].insert(parts[2].end(), g.begin() + std::ptrdiff_t(n_train + n_val), g.end());
    }
    DatasetSplit out;
    Dataset* dst[3] = {&out.train, &out.val, &out.test};
    for (int p = 0; p < 3; ++p) {
        std::shuffle(parts[p].begin(), parts[p].end(), rng);
        dst[p]->source = data.source;
        dst[p]->cell_line = data.cell_line;
        dst[p]->tf = data.tf;
        for (std::size_t i : parts[p]) dst[p]->records.push_back(data.records[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-cell-line datasets

// Bound sequences of one TF in one cell line, already divided into training
// and held-out records. Only label-1 records (bound sequences) are used.
struct TfRecords {
    Dataset train;
    Dataset test;
};

struct CrossCellSets {
    Dataset train;
    Dataset test;
};

// Divides each TF's dataset into training and held-out records.
inline std::map<std::string, TfRecords> holdout_split(const std::map<std::string, Dataset>& per_tf,
                                                      double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must lie in (0,1)");
    std::map<std::string, TfRecords> out;
    std::uint64_t stream = 0;
    for (const auto& [tf, data] : per_tf) {
        std::vector<std::size_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ull * ++stream);
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n_test = std::size_t(std::llround(test_fraction * double(idx.size())));
        TfRecords rec;
        rec.train.tf = rec.test.tf = tf;
        rec.train.cell_line = rec.test.cell_line = data.cell_line;
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_test ? rec.test : rec.train).records.push_back(data.records[idx[i]]);
        out.emplace(tf, std::move(rec));
    }
    return out;
}

namespace detail {
inline std::vector<LabeledRecord> bound_records(const Dataset& d, const std::string& tf, int label) {
    std::vector<LabeledRecord> out;
    for (const auto& r : d.records)
        if (r.label == 1) out.push_back({{tf + "|" + r.sequence.id, r.sequence.bases}, label});
    return out;
}
}  // namespace detail

// Target-TF discrimination sets. Training: every bound training sequence of
// the target TF as a positive, and exactly as many negatives drawn uniformly
// without replacement from the other TFs' bound training sequences, with at
// least one from every other TF whenever there are enough positives. Test:
// the target's held-out sequences against all other TFs' held-out sequences.
inline CrossCellSets make_cross_cell(const std::map<std::string, TfRecords>& corpus,
                                     const std::string& target_tf, std::uint64_t seed) {
    auto target = corpus.find(target_tf);
    if (target == corpus.end()) throw DataError("target TF '" + target_tf + "' not in corpus");
    if (corpus.size() < 2) throw DataError("cross-cell construction needs at least one other TF");

    CrossCellSets out;
    out.train.tf = out.test.tf = target_tf;
    out.train.cell_line = target->second.train.cell_line;
    out.test.cell_line = target->second.test.cell_line;
    out.train.records = detail::bound_records(target->second.train, target_tf, 1);
    out.test.records = detail::bound_records(target->second.test, target_tf, 1);
    const std::size_t n_pos = out.train.records.size();

    std::vector<std::vector<LabeledRecord>> per_tf;
    std::size_t pool_size = 0;
    for (const auto& [tf, rec] : corpus) {
        if (tf == target_tf) continue;
        auto neg = detail::bound_records(rec.train, tf, 0);
        pool_size += neg.size();
        if (!neg.empty()) per_tf.push_back(std::move(neg));
        for (auto& r : detail::bound_records(rec.test, tf, 0)) out.test.records.push_back(std::move(r));
    }
    if (pool_size < n_pos)
        throw DataError("only " + std::to_string(pool_size) + " candidate negatives for " +
                        std::to_string(n_pos) + " positives");

    std::mt19937_64 rng(seed);
    std::vector<LabeledRecord> chosen;
    std::vector<LabeledRecord> rest;
    if (n_pos >= per_tf.size()) {
        for (auto& group : per_tf) {
            std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
            const std::size_t j = pick(rng);
            chosen.push_back(group[j]);
            for (std::size_t i = 0; i < group.size(); ++i)
                if (i != j) rest.push_back(group[i]);
        }
    } else {
        for (auto& group : per_tf) rest.insert(rest.end(), group.begin(), group.end());
    }
    // Partial Fisher-Yates for the remaining draws.
    const std::size_t need = n_pos - chosen.size();
    for (std::size_t i = 0; i < need; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
        std::swap(rest[i], rest[pick(rng)]);
        chosen.push_back(rest[i]);
    }
    for (auto& r : chosen) out.train.records.push_back(std::move(r));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic motif data

// n/2 uniform-random sequences each carrying `motif` at a uniform offset
// (label 1) followed by n/2 uniform-random sequences (label 0).
inline Dataset synth_motif_dataset(std::size_t n, std::size_t length, const std::string& motif,
                                   std::uint64_t seed) {
    if (motif.empty()) throw ConfigError("motif must be non-empty");
    for (char c : motif)
        if (base_code(c) < 0) throw DataError("motif must contain only A/C/G/T");
    if (motif.size() >= length) throw ConfigError("motif must be shorter than the sequence length");
    if (n % 2 != 0) throw ConfigError("record count must be even");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> base(0, 3);
    std::uniform_int_distribution<std::size_t> offset(0, length - motif.size());
    auto random_bases = [&] {
        std::string s(length, 'A');
        for (auto& c : s) c = kBases[std::size_t(base(rng))];
        return s;
    };
    Dataset out;
    out.source = "synthetic:" + motif;
    char id[32];
    for (std::size_t i = 0; i < n / 2; ++i) {
        std::string s = random_bases();
        s.replace(offset(rng), motif.size(), motif);
        std::snprintf(id, sizeof id, "pos_%05zu", i);
        out.records.push_back({{id, std::move(s)}, 1});
    }
    for (std::size_t i = 0; i < n / 2; ++i) {
        std::snprintf(id, sizeof id, "neg_%05zu", i);
        out.records.push_back({{id, random_bases()}, 0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// File formats

inline std::string normalize_bases(std::string s) {
    for (auto& c : s) c = char(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline int parse_label(const std::string& text, const std::string& where) {
    if (text == "0") return 0;
    if (text == "1") return 1;
    throw FormatError(where + ": label must be 0 or 1, got '" + text + "'");
}

// TSV: id<TAB>sequence<TAB>label, '#' lines and blank lines skipped.
inline Dataset read_tsv(std::istream& in, const std::string& name = "<tsv>") {
    Dataset out;
    out.source = name;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        const std::string where = name + ":" + std::to_string(lineno);
        if (fields.size() != 3) throw FormatError(where + ": expected 3 tab-separated fields");
        out.records.push_back({{fields[0], normalize_bases(fields[1])}, parse_label(fields[2], where)});
    }
    validate(out);
    return out;
}

// FASTA with headers of the form ">id label=0|1".
inline Dataset read_fasta(std::istream& in, const std::string& name = "<fasta>") {
    Dataset out;
    out.source = name;
    std::string line;
    std::size_t lineno = 0;
    bool open = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(lineno);
        if (line.front() == '>') {
            std::istringstream header(line.substr(1));
            std::string id, field;
            header >> id;
            int label = -1;
            while (header >> field)
                if (field.rfind("label=", 0) == 0) label = parse_label(field.substr(6), where);
            if (id.empty()) throw FormatError(where + ": FASTA header without id");
            if (label < 0) throw FormatError(where + ": FASTA header lacks label=0|1");
            out.records.push_back({{id, ""}, label});
            open = true;
        } else {
            if (!open) throw FormatError(where + ": sequence line before any FASTA header");
            out.records.back().sequence.bases += normalize_bases(line);
        }
    }
    validate(out);
    return out;
}

inline void write_tsv(std::ostream& out, const Dataset& data) {
    for (const auto& r : data.records)
        out << r.sequence.id << '\t' << r.sequence.bases << '\t' << r.label << '\n';
}

// Loads TSV or FASTA, chosen by the first non-blank character ('>' = FASTA).
inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream stream(text);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '>') return read_fasta(stream, path);
    return read_tsv(stream, path);
}

inline void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset '" + path + "'");
    write_tsv(out, data);
    if (!out) throw DataError("failed writing dataset '" + path + "'");
}

}  // namespace tfbs::seqdata
