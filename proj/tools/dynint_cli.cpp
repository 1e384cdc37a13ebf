// dynint: CTR models built from polynomial interaction layers.
//
// Subcommands:
//   prepare     encode a CSV into the binary dataset cache
//   train       run the training loop, writing a run directory
//   eval        score a checkpoint on one split of a cache
//   verify      run a named verification suite against its oracle
//   svd-report  singular-value spectra of the interaction kernels
//
// Exit codes: 0 success, 1 verification/training failure, 2 usage or config
// error.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dynint/checkpoint.hpp"
#include "dynint/dataio.hpp"
#include "dynint/model.hpp"
#include "dynint/svd.hpp"
#include "dynint/train.hpp"
#include "dynint/verify.hpp"

namespace fs = std::filesystem;
using namespace dynint;

namespace {

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// FNV-1a over the raw file bytes; pins the dataset a run was trained on.
std::uint64_t file_fingerprint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file for fingerprinting: " + path);
    std::uint64_t h = 1469598103934665603ull;
    char c;
    while (in.get(c)) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// Mirrors stdout lines into the run log when one is open.
struct RunLog {
    std::ofstream file;
    void open(const fs::path& p) { file.open(p); }
    void line(const std::string& s) {
        std::cout << s << "\n";
        if (file.is_open()) file << s << "\n" << std::flush;
    }
};

const Dataset& pick_split(const DataCache& cache, const std::string& name) {
    if (name == "train") return cache.train;
    if (name == "valid") return cache.valid;
    if (name == "test") return cache.test;
    throw ConfigError("unknown split '" + name + "' (train, valid, test)");
}

int cmd_prepare(const std::string& schema_path, const std::string& csv_path,
                const std::string& out_path, std::uint64_t seed, double f_train, double f_valid,
                double f_test) {
    const Schema schema = parse_schema_file(schema_path);
    const CsvTable csv = read_csv(csv_path);
    EncodedData enc = encode_csv(csv, schema, seed, f_train, f_valid, f_test);

    DataCache cache;
    for (const auto& e : enc.encoders)
        cache.cardinalities.push_back(static_cast<std::uint32_t>(e.cardinality()));
    cache.train = std::move(enc.train);
    cache.valid = std::move(enc.valid);
    cache.test = std::move(enc.test);
    write_cache_file(out_path, cache);

    std::cout << "wrote " << out_path << "\n"
              << "fields " << cache.cardinalities.size() << "\n";
    for (std::size_t f = 0; f < cache.cardinalities.size(); ++f)
        std::cout << "  " << schema.fields[f].name << " cardinality "
                  << cache.cardinalities[f] << "\n";
    std::cout << "rows train=" << cache.train.rows.size() << " valid=" << cache.valid.rows.size()
              << " test=" << cache.test.rows.size() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& cache_path,
              const std::string& run_dir, long long seed_override) {
    TrainConfig cfg = parse_train_config_file(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!fs::exists(cache_path))
        throw ConfigError("data cache not found: " + cache_path +
                          "; encode the dataset with `dynint prepare` first");
    const DataCache cache = read_cache_file(cache_path);
    if (cache.train.rows.empty()) throw ConfigError("cache has an empty train split");

    fs::create_directories(run_dir);
    const fs::path dir(run_dir);
    RunLog log;
    log.open(dir / "train.log");
    {
        std::ofstream snap(dir / "config.txt");
        snap << serialize_train_config(cfg);
    }
    std::ofstream metrics(dir / "metrics.csv");
    metrics << "step,split,auc,logloss\n";

    std::ostringstream manifest;
    manifest << "started " << timestamp_utc() << "\n"
             << "data_cache " << cache_path << "\n"
             << "data_fingerprint " << std::hex << std::setw(16) << std::setfill('0')
             << file_fingerprint(cache_path) << std::dec << "\n"
             << "seed " << cfg.seed << "\n"
             << "variant " << variant_name(cfg.variant) << "\n";

    Rng rng(cfg.seed);
    Model m = Model::init(cfg.variant, cache.cardinalities, cfg.embed_dim, cfg.subspaces,
                          cfg.depth, cfg.rank, cfg.reduction, rng, cfg.da_full_gate);
    const ParamCounts pc = count_params(cfg, cache.cardinalities);
    log.line("model " + std::string(variant_name(cfg.variant)) + " depth=" +
             std::to_string(cfg.depth) + " embed_dim=" + std::to_string(cfg.embed_dim) +
             " subspaces=" + std::to_string(cfg.subspaces) + " rank=" + std::to_string(cfg.rank));
    log.line("params total=" + std::to_string(pc.total()) + " embedding=" +
             std::to_string(pc.embedding) + " interaction=" + std::to_string(pc.interaction_static) +
             " generators=" + std::to_string(pc.generators) + " head=" + std::to_string(pc.head));

    const TrainResult result = train_loop(
        m, cfg, cache.train, cache.valid,
        [&](std::size_t step, const char* split, const MetricReport& r) {
            std::ostringstream s;
            s << "step " << step << " " << split << " auc " << std::setprecision(6) << r.auc
              << " logloss " << r.logloss;
            log.line(s.str());
            metrics << step << "," << split << "," << std::setprecision(17) << r.auc << ","
                    << r.logloss << "\n"
                    << std::flush;
        });

    write_tensor_map_file((dir / "best.ckpt").string(), result.best_checkpoint);
    TensorMap last = model_to_tensors(m);
    write_tensor_map_file((dir / "last.ckpt").string(), last);

    manifest << "finished " << timestamp_utc() << "\n"
             << "steps " << result.run.step << "\n"
             << "best_valid_logloss " << std::setprecision(17) << result.best_valid.logloss << "\n"
             << "best_valid_auc " << result.best_valid.auc << "\n";
    std::ofstream(dir / "manifest.txt") << manifest.str();

    std::ostringstream done;
    done << "done steps=" << result.run.step << " best valid auc " << std::setprecision(6)
         << result.best_valid.auc << " logloss " << result.best_valid.logloss;
    log.line(done.str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& cache_path, const std::string& split,
             const std::string& run_dir) {
    const TensorMap t = read_tensor_map_file(ckpt_path);
    const Model m = model_from_checkpoint(t);
    const DataCache cache = read_cache_file(cache_path);
    const Dataset& data = pick_split(cache, split);
    if (data.rows.empty()) throw ConfigError("split '" + split + "' is empty");
    if (cache.cardinalities.size() != m.fields())
        throw ConfigError("checkpoint expects " + std::to_string(m.fields()) +
                          " fields, cache has " + std::to_string(cache.cardinalities.size()));

    const MetricReport r = evaluate(m, data);
    std::cout << "split " << split << " n " << r.n << " auc " << std::setprecision(6) << r.auc
              << " logloss " << r.logloss << "\n";
    if (!run_dir.empty()) {
        std::ofstream metrics(fs::path(run_dir) / "metrics.csv", std::ios::app);
        metrics << "-," << split << "," << std::setprecision(17) << r.auc << "," << r.logloss
                << "\n";
    }
    return 0;
}

int cmd_verify(const std::string& suite) {
    std::vector<std::string> names;
    if (suite == "all")
        names = {"grad", "poly", "lowrank", "sparsity", "metrics"};
    else
        names = {suite};
    bool all_pass = true;
    for (const auto& name : names) {
        const SuiteResult r = run_suite(name);
        std::cout << "suite " << r.name << ": " << (r.pass ? "pass" : "FAIL") << "\n";
        for (const auto& line : r.lines) std::cout << line << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

// Spectra of the static interaction kernels by two independent routes:
// one-sided Jacobi on W and eigenvalues of W^T W. Disagreement beyond
// tolerance is reported as a failure.
int cmd_svd_report(const std::string& ckpt_path) {
    const TensorMap t = read_tensor_map_file(ckpt_path);
    const Model m = model_from_checkpoint(t);
    if (m.stack.w.empty())
        throw ConfigError(std::string("variant ") + variant_name(m.stack.variant) +
                          " keeps no dense interaction kernels; nothing to decompose");
    bool ok = true;
    std::cout << "layer,index,singular_value\n";
    for (std::size_t l = 0; l < m.stack.w.size(); ++l) {
        const std::vector<double> sv = singular_values(m.stack.w[l]);
        const std::vector<double> ev =
            symmetric_eigenvalues(matmul(transpose(m.stack.w[l]), m.stack.w[l]));
        double worst = 0.0;
        for (std::size_t i = 0; i < sv.size(); ++i) {
            std::cout << l << "," << i << "," << std::setprecision(17) << sv[i] << "\n";
            const double ref = std::sqrt(std::max(0.0, ev[i]));
            worst = std::max(worst, std::abs(sv[i] - ref));
        }
        std::cerr << "layer " << l << " cross-check vs gram eigenvalues: max abs diff " << worst
                  << "\n";
        ok = ok && worst < 1e-8;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynint: polynomial interaction networks for CTR prediction"};
    app.require_subcommand(1);

    std::string schema_path, csv_path, out_path, config_path, cache_path, run_dir, ckpt_path;
    std::string split = "test", suite = "all";
    std::uint64_t seed = 1;
    long long seed_override = -1;
    double f_train = 0.7, f_valid = 0.1, f_test = 0.2;

    auto* prepare = app.add_subcommand("prepare", "encode a CSV into a dataset cache");
    prepare->add_option("--schema", schema_path, "schema file")->required();
    prepare->add_option("--csv", csv_path, "input CSV with a header row")->required();
    prepare->add_option("--out", out_path, "output cache path")->required();
    prepare->add_option("--seed", seed, "split shuffle seed");
    prepare->add_option("--train-frac", f_train, "train fraction");
    prepare->add_option("--valid-frac", f_valid, "validation fraction");
    prepare->add_option("--test-frac", f_test, "test fraction");

    auto* train = app.add_subcommand("train", "train a model, writing a run directory");
    train->add_option("--config", config_path, "training config file")->required();
    train->add_option("--data-cache", cache_path, "dataset cache from prepare")->required();
    train->add_option("--run-dir", run_dir, "output run directory")->required();
    train->add_option("--seed", seed_override, "override the config seed");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on one split");
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval->add_option("--data-cache", cache_path, "dataset cache")->required();
    eval->add_option("--split", split, "train, valid or test");
    eval->add_option("--run-dir", run_dir, "append the result to this run's metrics.csv");

    auto* verify = app.add_subcommand("verify", "run a verification suite");
    verify->add_option("--suite", suite, "grad, poly, lowrank, sparsity, metrics or all");

    auto* svd = app.add_subcommand("svd-report", "interaction kernel spectra, two routes");
    svd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (prepare->parsed())
            return cmd_prepare(schema_path, csv_path, out_path, seed, f_train, f_valid, f_test);
        if (train->parsed()) return cmd_train(config_path, cache_path, run_dir, seed_override);
        if (eval->parsed()) return cmd_eval(ckpt_path, cache_path, split, run_dir);
        if (verify->parsed()) return cmd_verify(suite);
        if (svd->parsed()) return cmd_svd_report(ckpt_path);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
