#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dynint/dataio.hpp"

using namespace dynint;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = "tmp_dataio_" + name;
    std::ofstream(path) << content;
    return path;
}

}  // namespace

TEST_CASE("log_square transform") {
    CHECK(log_square(1.0) == 0);                    // ln 1 = 0
    CHECK(log_square(std::exp(1.0)) == 2);          // ln e^2 = 2
    CHECK(log_square(-std::exp(1.0)) == 2);         // symmetric in sign
    CHECK(log_square(0.0) == -28);                  // ln 1e-12 = -27.6...
    CHECK(log_square(10.0) == 4);                   // ln 100 = 4.60...
}

TEST_CASE("fit_bins quantile edges") {
    FieldSpec f;
    f.kind = FieldKind::Continuous;
    f.num_bins = 4;

    SUBCASE("1..8 uniform") {
        BinEdges b = fit_bins({1, 2, 3, 4, 5, 6, 7, 8}, f);
        REQUIRE(b.edges.size() == 3);
        CHECK(b.edges[0] == doctest::Approx(2.5));
        CHECK(b.edges[1] == doctest::Approx(4.5));
        CHECK(b.edges[2] == doctest::Approx(6.5));
        CHECK(b.num_buckets() == 4);
        CHECK(b.encode(1.0) == 0);
        CHECK(b.encode(3.0) == 1);
        CHECK(b.encode(5.0) == 2);
        CHECK(b.encode(100.0) == 3);   // clamps into the top bucket
        CHECK(b.encode(-100.0) == 0);  // clamps into the bottom bucket
        CHECK(b.encode(2.5) == 1);     // edge value goes up
    }
    SUBCASE("constant values collapse to one bucket") {
        BinEdges b = fit_bins({3, 3, 3, 3, 3}, f);
        CHECK(b.edges.empty());
        CHECK(b.num_buckets() == 1);
        CHECK(b.encode(3.0) == 0);
        CHECK(b.encode(-1e9) == 0);
    }
    SUBCASE("empty input is an error") {
        CHECK_THROWS_AS(fit_bins({}, f), ConfigError);
    }
}

TEST_CASE("build_vocab min_count and OOV") {
    FieldSpec f;
    f.min_count = 2;
    std::vector<std::string> tokens = {"a", "b", "a", "c", "b", "a", "d"};
    Vocabulary v = build_vocab(tokens, f);
    // a, b kept in first-seen order; c, d fall below min_count
    CHECK(v.cardinality == 3);
    CHECK(v.encode("a") == 0);
    CHECK(v.encode("b") == 1);
    CHECK(v.encode("c") == v.oov_index);
    CHECK(v.encode("never_seen") == v.oov_index);
    CHECK(v.oov_index == 2);

    SUBCASE("min_count high enough empties the vocab") {
        f.min_count = 100;
        Vocabulary empty = build_vocab(tokens, f);
        CHECK(empty.cardinality == 1);
        CHECK(empty.encode("a") == empty.oov_index);
    }
}

TEST_CASE("split sizes, determinism and partition") {
    Dataset ds;
    ds.num_fields = 1;
    for (std::uint32_t i = 0; i < 10; ++i) {
        DatasetRow r;
        r.indices = {i};
        ds.rows.push_back(r);
    }
    Rng rng(7);
    auto parts = split(ds, 0.7, 0.1, 0.2, rng);
    CHECK(parts[0].rows.size() == 7);
    CHECK(parts[1].rows.size() == 1);
    CHECK(parts[2].rows.size() == 2);

    // disjoint partition covering every input row
    std::vector<bool> seen(10, false);
    for (const auto& part : parts)
        for (const auto& r : part.rows) {
            CHECK(!seen[r.indices[0]]);
            seen[r.indices[0]] = true;
        }
    for (bool s : seen) CHECK(s);

    // same seed, same partition
    Rng rng2(7);
    auto parts2 = split(ds, 0.7, 0.1, 0.2, rng2);
    for (int s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < parts[s].rows.size(); ++i)
            CHECK(parts[s].rows[i].indices[0] == parts2[s].rows[i].indices[0]);

    CHECK_THROWS_AS(split(ds, 0.5, 0.1, 0.2, rng), ConfigError);
}

TEST_CASE("csv reading and errors") {
    const std::string good = write_temp("good.csv", "a,b,y\n1,x,0\n2,y,1\n");
    CsvTable t = read_csv(good);
    CHECK(t.header == std::vector<std::string>{"a", "b", "y"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1][1] == "y");

    const std::string bad = write_temp("bad.csv", "a,b,y\n1,x,0\n2,1\n");
    try {
        read_csv(bad);
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);  // line number named
    }
    CHECK_THROWS_AS(read_csv("no_such_file.csv"), ConfigError);
    std::remove(good.c_str());
    std::remove(bad.c_str());
}

TEST_CASE("schema parsing") {
    std::istringstream ok(
        "label click\n"
        "# comment\n"
        "field ad categorical min_count=5\n"
        "field price continuous num_bins=8 log_square\n");
    Schema s = parse_schema(ok);
    CHECK(s.label_column == "click");
    REQUIRE(s.fields.size() == 2);
    CHECK(s.fields[0].kind == FieldKind::Categorical);
    CHECK(s.fields[0].min_count == 5);
    CHECK(s.fields[1].kind == FieldKind::Continuous);
    CHECK(s.fields[1].num_bins == 8);
    CHECK(s.fields[1].log_square_transform);

    std::istringstream bad_kind("label y\nfield a ordinal\n");
    CHECK_THROWS_AS(parse_schema(bad_kind), ConfigError);
    std::istringstream no_label("field a categorical\n");
    CHECK_THROWS_AS(parse_schema(no_label), ConfigError);
    std::istringstream bad_opt("label y\nfield a categorical frobnicate\n");
    CHECK_THROWS_AS(parse_schema(bad_opt), ConfigError);
}

namespace {

CsvTable toy_csv(std::size_t n) {
    CsvTable t;
    t.header = {"cat", "val", "y"};
    for (std::size_t i = 0; i < n; ++i)
        t.rows.push_back({"c" + std::to_string(i % 3), std::to_string(i % 7),
                          i % 2 ? "1" : "0"});
    return t;
}

Schema toy_schema() {
    std::istringstream in(
        "label y\n"
        "field cat categorical min_count=1\n"
        "field val continuous num_bins=4\n");
    return parse_schema(in);
}

}  // namespace

TEST_CASE("encode_csv: fit on train only, determinism, totality") {
    const CsvTable csv = toy_csv(50);
    const Schema schema = toy_schema();
    EncodedData a = encode_csv(csv, schema, 11);
    EncodedData b = encode_csv(csv, schema, 11);

    CHECK(a.train.rows.size() + a.valid.rows.size() + a.test.rows.size() == 50);
    REQUIRE(a.train.rows.size() == b.train.rows.size());
    for (std::size_t i = 0; i < a.train.rows.size(); ++i) {
        CHECK(a.train.rows[i].indices == b.train.rows[i].indices);
        CHECK(a.train.rows[i].label == b.train.rows[i].label);
    }
    // every index within the field's cardinality
    for (const Dataset* ds : {&a.train, &a.valid, &a.test})
        for (const auto& r : ds->rows)
            for (std::size_t f = 0; f < r.indices.size(); ++f)
                CHECK(r.indices[f] < a.encoders[f].cardinality());

    SUBCASE("unknown schema column is an error") {
        Schema s2 = schema;
        s2.fields[0].name = "missing";
        CHECK_THROWS_AS(encode_csv(csv, s2, 11), ConfigError);
    }
    SUBCASE("non-binary label is an error") {
        CsvTable bad = csv;
        bad.rows[0][2] = "2";
        CHECK_THROWS_AS(encode_csv(bad, schema, 11), ConfigError);
    }
}

TEST_CASE("dataset cache round trip") {
    const CsvTable csv = toy_csv(30);
    EncodedData enc = encode_csv(csv, toy_schema(), 3);
    DataCache c;
    for (const auto& e : enc.encoders)
        c.cardinalities.push_back(static_cast<std::uint32_t>(e.cardinality()));
    c.train = enc.train;
    c.valid = enc.valid;
    c.test = enc.test;

    std::stringstream buf;
    write_cache(buf, c);
    DataCache back = read_cache(buf);
    CHECK(back.cardinalities == c.cardinalities);
    REQUIRE(back.train.rows.size() == c.train.rows.size());
    REQUIRE(back.valid.rows.size() == c.valid.rows.size());
    REQUIRE(back.test.rows.size() == c.test.rows.size());
    for (std::size_t i = 0; i < c.train.rows.size(); ++i) {
        CHECK(back.train.rows[i].indices == c.train.rows[i].indices);
        CHECK(back.train.rows[i].label == c.train.rows[i].label);
    }

    // byte determinism of the writer
    std::stringstream buf2;
    write_cache(buf2, c);
    CHECK(buf.str() == buf2.str());

    SUBCASE("bad magic rejected") {
        std::stringstream junk;
        junk << "NOPE rest of file";
        CHECK_THROWS_AS(read_cache(junk), FormatError);
    }
    SUBCASE("truncated file rejected") {
        std::string bytes = buf.str();
        std::stringstream cut;
        cut << bytes.substr(0, bytes.size() / 2);
        CHECK_THROWS_AS(read_cache(cut), FormatError);
    }
}
