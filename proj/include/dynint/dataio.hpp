#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynint/error.hpp"
#include "dynint/matrix.hpp"

namespace dynint {

enum class FieldKind { Categorical, Continuous };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::Categorical;
    std::size_t min_count = 20;
    std::size_t num_bins = 100;          // continuous only
    bool log_square_transform = false;   // continuous only
};

// floor(ln(v^2 + eps)); eps guards v = 0. Applied before binning when the
// field's flag is set.
inline long log_square(double v) {
    constexpr double eps = 1e-12;
    return static_cast<long>(std::floor(std::log(v * v + eps)));
}

struct Vocabulary {
    FieldSpec field;
    std::unordered_map<std::string, std::size_t> index;
    std::size_t oov_index = 0;
    std::size_t cardinality = 1;  // includes OOV

    std::size_t encode(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? oov_index : it->second;
    }
};

// Tokens with training-split count >= min_count keep indices in first-seen
// order; everything else maps to the trailing OOV index.
inline Vocabulary build_vocab(const std::vector<std::string>& tokens, const FieldSpec& field) {
    std::unordered_map<std::string, std::size_t> counts;
    std::vector<std::string> order;
    for (const auto& t : tokens) {
        if (counts[t]++ == 0) order.push_back(t);
    }
    Vocabulary v;
    v.field = field;
    std::size_t next = 0;
    for (const auto& t : order) {
        if (counts[t] >= field.min_count) v.index.emplace(t, next++);
    }
    v.oov_index = next;
    v.cardinality = next + 1;
    return v;
}

struct BinEdges {
    FieldSpec field;
    std::vector<double> edges;  // sorted, length <= num_bins - 1

    std::size_t num_buckets() const { return edges.size() + 1; }

    // upper_bound puts values equal to an edge into the bucket above it;
    // out-of-range values clamp into the edge buckets by construction.
    std::size_t encode(double v) const {
        return static_cast<std::size_t>(
            std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    }
};

// Equal-frequency bin edges at the k/num_bins empirical quantiles with
// midpoint interpolation between order statistics. Duplicate edges collapse,
// so heavy ties yield fewer effective buckets.
inline BinEdges fit_bins(std::vector<double> values, const FieldSpec& field) {
    if (values.empty())
        throw ConfigError("fit_bins: empty value set for field '" + field.name + "'");
    if (field.num_bins < 1)
        throw ConfigError("fit_bins: num_bins must be >= 1 for field '" + field.name + "'");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    BinEdges out;
    out.field = field;
    for (std::size_t k = 1; k < field.num_bins; ++k) {
        // quantile q = k/num_bins over n order statistics, midpoint rule
        const double pos = static_cast<double>(k) * static_cast<double>(n) /
                           static_cast<double>(field.num_bins);
        const std::size_t hi = std::min(n - 1, static_cast<std::size_t>(pos));
        double edge;
        if (pos == std::floor(pos) && hi > 0) {
            edge = 0.5 * (values[hi - 1] + values[hi]);
        } else {
            edge = values[hi];
        }
        // skip duplicates, and edges at the minimum whose lower bucket no
        // training value could ever reach (constant fields end up unbinned)
        if (edge <= values.front()) continue;
        if (out.edges.empty() || edge > out.edges.back()) out.edges.push_back(edge);
    }
    return out;
}

struct DatasetRow {
    std::vector<std::uint32_t> indices;  // length F
    std::uint8_t label = 0;
};

struct Dataset {
    std::size_t num_fields = 0;
    std::vector<DatasetRow> rows;
};

// Disjoint random partition by seeded shuffle; sizes by largest remainder.
inline std::array<Dataset, 3> split(const Dataset& ds, double f_train, double f_valid,
                                    double f_test, Rng& rng) {
    const double sum = f_train + f_valid + f_test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split: fractions sum to " + std::to_string(sum) + ", expected 1");
    const std::size_t n = ds.rows.size();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);

    const double fracs[3] = {f_train, f_valid, f_test};
    std::size_t sizes[3];
    std::size_t assigned = 0;
    double rema[3];
    for (int s = 0; s < 3; ++s) {
        const double exact = fracs[s] * static_cast<double>(n);
        sizes[s] = static_cast<std::size_t>(std::floor(exact));
        rema[s] = exact - std::floor(exact);
        assigned += sizes[s];
    }
    while (assigned < n) {  // largest remainder gets the extra row
        int best = 0;
        for (int s = 1; s < 3; ++s)
            if (rema[s] > rema[best]) best = s;
        ++sizes[best];
        rema[best] = -1.0;
        ++assigned;
    }

    std::array<Dataset, 3> out;
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
        out[s].num_fields = ds.num_fields;
        out[s].rows.reserve(sizes[s]);
        for (std::size_t i = 0; i < sizes[s]; ++i) out[s].rows.push_back(ds.rows[perm[pos++]]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("CSV file has no header row: " + path);
    t.header = split_csv_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " columns, got " +
                              std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Encoder: per-field vocab or bins fit on the train split only.

struct FieldEncoder {
    FieldSpec spec;
    Vocabulary vocab;   // categorical, or binned-continuous bucket vocab
    BinEdges bins;      // continuous only

    std::size_t cardinality() const {
        return spec.kind == FieldKind::Categorical ? vocab.cardinality : bins.num_buckets();
    }
};

struct Schema {
    std::vector<FieldSpec> fields;
    std::string label_column;
};

// Flat schema config: one line per key, `label <col>` then
// `field <name> categorical [min_count=N]` or
// `field <name> continuous [num_bins=N] [log_square]`.
inline Schema parse_schema(std::istream& in) {
    Schema s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word) || word[0] == '#') continue;
        if (word == "label") {
            if (!(ls >> s.label_column)) throw ConfigError("schema: label column missing");
        } else if (word == "field") {
            FieldSpec f;
            std::string kind;
            if (!(ls >> f.name >> kind))
                throw ConfigError("schema line " + std::to_string(lineno) + ": field needs name and kind");
            if (kind == "categorical") f.kind = FieldKind::Categorical;
            else if (kind == "continuous") f.kind = FieldKind::Continuous;
            else throw ConfigError("schema: unknown field kind '" + kind + "'");
            std::string opt;
            while (ls >> opt) {
                if (opt == "log_square") f.log_square_transform = true;
                else if (opt.rfind("min_count=", 0) == 0) f.min_count = std::stoul(opt.substr(10));
                else if (opt.rfind("num_bins=", 0) == 0) f.num_bins = std::stoul(opt.substr(9));
                else throw ConfigError("schema: unknown field option '" + opt + "'");
            }
            if (f.kind == FieldKind::Continuous && f.num_bins < 1)
                throw ConfigError("schema: num_bins must be >= 1 for field '" + f.name + "'");
            s.fields.push_back(std::move(f));
        } else {
            throw ConfigError("schema line " + std::to_string(lineno) + ": unknown directive '" + word + "'");
        }
    }
    if (s.label_column.empty()) throw ConfigError("schema: no label column declared");
    if (s.fields.empty()) throw ConfigError("schema: no fields declared");
    return s;
}

inline Schema parse_schema_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema file: " + path);
    return parse_schema(in);
}

inline double parse_continuous(const std::string& cell, const FieldSpec& spec) {
    double v = cell.empty() ? 0.0 : std::stod(cell);
    if (spec.log_square_transform) v = static_cast<double>(log_square(v));
    return v;
}

struct EncodedData {
    std::vector<FieldEncoder> encoders;
    Dataset train, valid, test;
};

// Fit split + vocab/bins on the train split and encode all three splits.
inline EncodedData encode_csv(const CsvTable& csv, const Schema& schema, std::uint64_t seed,
                              double f_train = 0.7, double f_valid = 0.1, double f_test = 0.2) {
    const std::size_t F = schema.fields.size();
    std::vector<std::size_t> col_of(F);
    std::size_t label_col = csv.header.size();
    for (std::size_t f = 0; f < F; ++f) {
        auto it = std::find(csv.header.begin(), csv.header.end(), schema.fields[f].name);
        if (it == csv.header.end())
            throw ConfigError("schema field '" + schema.fields[f].name + "' not in CSV header");
        col_of[f] = static_cast<std::size_t>(it - csv.header.begin());
    }
    {
        auto it = std::find(csv.header.begin(), csv.header.end(), schema.label_column);
        if (it == csv.header.end())
            throw ConfigError("label column '" + schema.label_column + "' not in CSV header");
        label_col = static_cast<std::size_t>(it - csv.header.begin());
    }

    // Split row ids first so vocab/bins see only the train split.
    Dataset ids;
    ids.num_fields = 1;
    ids.rows.resize(csv.rows.size());
    for (std::size_t i = 0; i < csv.rows.size(); ++i)
        ids.rows[i].indices = {static_cast<std::uint32_t>(i)};
    Rng rng(seed);
    auto id_splits = split(ids, f_train, f_valid, f_test, rng);

    EncodedData out;
    out.encoders.resize(F);
    for (std::size_t f = 0; f < F; ++f) {
        const FieldSpec& spec = schema.fields[f];
        FieldEncoder enc;
        enc.spec = spec;
        if (spec.kind == FieldKind::Categorical) {
            std::vector<std::string> tokens;
            tokens.reserve(id_splits[0].rows.size());
            for (const auto& r : id_splits[0].rows)
                tokens.push_back(csv.rows[r.indices[0]][col_of[f]]);
            enc.vocab = build_vocab(tokens, spec);
        } else {
            std::vector<double> values;
            values.reserve(id_splits[0].rows.size());
            for (const auto& r : id_splits[0].rows)
                values.push_back(parse_continuous(csv.rows[r.indices[0]][col_of[f]], spec));
            enc.bins = fit_bins(values, spec);
        }
        out.encoders[f] = std::move(enc);
    }

    auto encode_split = [&](const Dataset& id_split, Dataset& dst) {
        dst.num_fields = F;
        dst.rows.reserve(id_split.rows.size());
        for (const auto& idr : id_split.rows) {
            const auto& cells = csv.rows[idr.indices[0]];
            DatasetRow row;
            row.indices.resize(F);
            for (std::size_t f = 0; f < F; ++f) {
                const FieldEncoder& enc = out.encoders[f];
                if (enc.spec.kind == FieldKind::Categorical)
                    row.indices[f] = static_cast<std::uint32_t>(enc.vocab.encode(cells[col_of[f]]));
                else
                    row.indices[f] = static_cast<std::uint32_t>(
                        enc.bins.encode(parse_continuous(cells[col_of[f]], enc.spec)));
            }
            const std::string& lab = cells[label_col];
            if (lab != "0" && lab != "1")
                throw ConfigError("label column must hold 0 or 1, got '" + lab + "'");
            row.label = static_cast<std::uint8_t>(lab == "1" ? 1 : 0);
            dst.rows.push_back(std::move(row));
        }
    };
    encode_split(id_splits[0], out.train);
    encode_split(id_splits[1], out.valid);
    encode_split(id_splits[2], out.test);
    return out;
}

// ---------------------------------------------------------------------------
// Encoded dataset cache. Layout (little-endian):
//   magic "DYNI" | u16 version | u32 F | per-field cardinality u32
//   3 splits, each: u64 row count | rows of (F x u32 indices, u8 label)
constexpr std::uint16_t kCacheVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("unexpected end of file");
    return v;
}
}  // namespace detail

struct DataCache {
    std::vector<std::uint32_t> cardinalities;
    Dataset train, valid, test;
};

inline void write_cache(std::ostream& out, const DataCache& c) {
    out.write("DYNI", 4);
    detail::write_pod<std::uint16_t>(out, kCacheVersion);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.cardinalities.size()));
    for (auto card : c.cardinalities) detail::write_pod<std::uint32_t>(out, card);
    for (const Dataset* ds : {&c.train, &c.valid, &c.test}) {
        detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(ds->rows.size()));
        for (const auto& r : ds->rows) {
            for (auto idx : r.indices) detail::write_pod<std::uint32_t>(out, idx);
            detail::write_pod<std::uint8_t>(out, r.label);
        }
    }
}

inline DataCache read_cache(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DYNI", 4) != 0)
        throw FormatError("not a DYNI data cache (bad magic)");
    const auto version = detail::read_pod<std::uint16_t>(in);
    if (version != kCacheVersion)
        throw FormatError("unsupported cache version " + std::to_string(version));
    DataCache c;
    const auto F = detail::read_pod<std::uint32_t>(in);
    c.cardinalities.resize(F);
    for (auto& card : c.cardinalities) card = detail::read_pod<std::uint32_t>(in);
    for (Dataset* ds : {&c.train, &c.valid, &c.test}) {
        ds->num_fields = F;
        const auto n = detail::read_pod<std::uint64_t>(in);
        ds->rows.resize(n);
        for (auto& r : ds->rows) {
            r.indices.resize(F);
            for (std::uint32_t f = 0; f < F; ++f) {
                r.indices[f] = detail::read_pod<std::uint32_t>(in);
                if (r.indices[f] >= c.cardinalities[f])
                    throw FormatError("cache row index out of range");
            }
            r.label = detail::read_pod<std::uint8_t>(in);
        }
    }
    return c;
}

inline void write_cache_file(const std::string& path, const DataCache& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write cache file: " + path);
    write_cache(out, c);
}

inline DataCache read_cache_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open data cache '" + path + "' (run the prepare command first)");
    return read_cache(in);
}

}  // namespace dynint
