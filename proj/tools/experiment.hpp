#pragma once

// JSON experiment configs for the drme command-line tool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "drme/eval.hpp"
#include "drme/train.hpp"

namespace drme::cli {

using nlohmann::json;

struct ExperimentConfig {
    StreamSpec stream;
    std::vector<int> hidden{64};
    TrainConfig train;
    std::optional<AttackConfig> attack;
    std::string csv_path;
    std::string summary_path;  // empty: summary goes to stdout only
    std::vector<std::uint64_t> seeds{0};
};

inline const json& default_document() {
    static const json doc = json::parse(R"({
        "stream": {
            "source": "synthetic", "tasks": 5, "classes_per_task": 2, "samples_per_task": 1000,
            "batch_size": 10, "seed": 0, "dim": 16, "mean_spread": 0.5, "noise_sigma": 0.5,
            "idx": {"train_images": "", "train_labels": "", "test_images": "", "test_labels": ""}
        },
        "model": {"hidden": [64]},
        "train": {
            "method": "ER", "lr": 0.05, "memory_capacity": 200, "replay_batch": 0, "epochs": 5, "eval_every": 0,
            "evolution": {"alpha": 0.01, "steps": 5, "beta": 0.003, "tau": 0.1, "kernel_sigma": "median",
                          "fd_eps": 0.001, "center": "symmetric", "clamp": null}
        },
        "attack": null,
        "output": {"csv": "results.csv", "summary": ""},
        "seeds": [0]
    })");
    return doc;
}

inline const json& default_attack() {
    static const json doc = json::parse(R"({
        "epsilons": null, "grid_scale": 1.0, "steps": 20, "step_size": null,
        "random_start": false, "clamp": null, "seed": 0
    })");
    return doc;
}

namespace detail {

/// Overlay `user` onto `base`, rejecting keys the schema does not know.
inline void merge_checked(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError((path.empty() ? "config" : path) + " must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        if (key == "attack") {
            if (it->is_null()) {
                slot = nullptr;
            } else {
                slot = default_attack();
                merge_checked(slot, *it, key);
            }
        } else if (slot.is_object() && !it->is_null()) {
            merge_checked(slot, *it, key);
        } else {
            slot = *it;
        }
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

inline std::optional<Clamp> get_clamp(const json& j, const std::string& where) {
    if (j.is_null()) return std::nullopt;
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ConfigError(where + " must be null or [lo, hi]");
    return Clamp{j[0].get<double>(), j[1].get<double>()};
}

inline std::uint64_t get_seed(const json& j, const std::string& where) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
        throw ConfigError(where + " must be a non-negative integer");
    return j.get<std::uint64_t>();
}

}  // namespace detail

/// Applies `key=value` where key is a dotted path into the document. The
/// value is read as JSON when it parses, otherwise as a string.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::string walked;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        walked += (walked.empty() ? "" : ".") + part;
        if (walked == "attack" && node->contains("attack") && (*node)["attack"].is_null() && dot != std::string::npos)
            (*node)["attack"] = default_attack();
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + walked + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

inline json load_document(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
    json doc = default_document();
    detail::merge_checked(doc, user, "");
    return doc;
}

/// Typed view of a merged document; all schema and range checks happen here.
inline ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir = {}) {
    using detail::get;
    ExperimentConfig c;

    const json& s = doc.at("stream");
    const auto source = get<std::string>(s, "source", "stream");
    if (source == "synthetic") {
        c.stream.source = StreamSource::Synthetic;
    } else if (source == "idx") {
        c.stream.source = StreamSource::Idx;
    } else {
        throw ConfigError("stream.source must be 'synthetic' or 'idx'");
    }
    c.stream.tasks = get<int>(s, "tasks", "stream");
    c.stream.classes_per_task = get<int>(s, "classes_per_task", "stream");
    c.stream.samples_per_task = get<int>(s, "samples_per_task", "stream");
    c.stream.batch_size = get<int>(s, "batch_size", "stream");
    c.stream.seed = detail::get_seed(s.at("seed"), "stream.seed");
    c.stream.dim = get<int>(s, "dim", "stream");
    c.stream.mean_spread = get<double>(s, "mean_spread", "stream");
    c.stream.noise_sigma = get<double>(s, "noise_sigma", "stream");
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        const std::filesystem::path fp(p);
        return (fp.is_relative() && !base_dir.empty() ? base_dir / fp : fp).string();
    };
    const json& idx = s.at("idx");
    c.stream.idx = {resolve(get<std::string>(idx, "train_images", "stream.idx")),
                    resolve(get<std::string>(idx, "train_labels", "stream.idx")),
                    resolve(get<std::string>(idx, "test_images", "stream.idx")),
                    resolve(get<std::string>(idx, "test_labels", "stream.idx"))};
    c.stream.validate();
    if (c.stream.source == StreamSource::Idx) {
        for (const auto* p : {&c.stream.idx.train_images, &c.stream.idx.train_labels, &c.stream.idx.test_images,
                              &c.stream.idx.test_labels})
            if (!p->empty() && !std::filesystem::exists(*p)) throw ConfigError("stream.idx file not found: " + *p);
    }
    const bool bounded = c.stream.source == StreamSource::Idx;

    const json& hidden = doc.at("model").at("hidden");
    if (!hidden.is_array()) throw ConfigError("model.hidden must be a list of layer widths");
    c.hidden.clear();
    for (const auto& h : hidden) {
        if (!h.is_number_integer() || h.get<int>() < 1) throw ConfigError("model.hidden widths must be integers >= 1");
        c.hidden.push_back(h.get<int>());
    }

    const json& t = doc.at("train");
    const auto method = parse_train_method(get<std::string>(t, "method", "train"));
    if (!method) throw ConfigError("train.method must be one of FineTune, ER, ER_WGF_LD, ER_WGF_SVGD, ER_WGF_HMC, IidOffline");
    c.train.method = *method;
    c.train.lr = get<double>(t, "lr", "train");
    c.train.memory_capacity = get<std::size_t>(t, "memory_capacity", "train");
    c.train.replay_batch = get<std::size_t>(t, "replay_batch", "train");
    c.train.epochs = get<int>(t, "epochs", "train");
    c.train.eval_every = get<int>(t, "eval_every", "train");
    const json& e = t.at("evolution");
    auto& evo = c.train.evolution;
    evo.alpha = get<double>(e, "alpha", "train.evolution");
    evo.steps = get<int>(e, "steps", "train.evolution");
    evo.beta = get<double>(e, "beta", "train.evolution");
    evo.tau = get<double>(e, "tau", "train.evolution");
    if (const json& ks = e.at("kernel_sigma"); !ks.is_null() && ks != "median")
        evo.kernel_sigma = get<double>(e, "kernel_sigma", "train.evolution");
    evo.fd_eps = get<double>(e, "fd_eps", "train.evolution");
    const auto center = get<std::string>(e, "center", "train.evolution");
    if (center == "symmetric") {
        evo.center = CenterGradient::Symmetric;
    } else if (center == "exact") {
        evo.center = CenterGradient::Exact;
    } else {
        throw ConfigError("train.evolution.center must be 'symmetric' or 'exact'");
    }
    evo.clamp = detail::get_clamp(e.at("clamp"), "train.evolution.clamp");
    if (!evo.clamp && bounded) evo.clamp = Clamp{0.0, 1.0};
    c.train.validate();

    if (const json& a = doc.at("attack"); !a.is_null()) {
        AttackConfig atk = AttackConfig::standard_grid(get<double>(a, "grid_scale", "attack"));
        if (!a.at("epsilons").is_null()) atk.epsilons = get<std::vector<double>>(a, "epsilons", "attack");
        atk.steps = get<int>(a, "steps", "attack");
        if (!a.at("step_size").is_null()) atk.step_size = get<double>(a, "step_size", "attack");
        atk.random_start = get<bool>(a, "random_start", "attack");
        atk.clamp = detail::get_clamp(a.at("clamp"), "attack.clamp");
        if (!atk.clamp && bounded) atk.clamp = Clamp{0.0, 1.0};
        atk.seed = detail::get_seed(a.at("seed"), "attack.seed");
        atk.validate();
        c.attack = atk;
    }

    const json& out = doc.at("output");
    c.csv_path = get<std::string>(out, "csv", "output");
    if (c.csv_path.empty()) throw ConfigError("output.csv must name a file");
    c.summary_path = get<std::string>(out, "summary", "output");

    const json& seeds = doc.at("seeds");
    if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds must be a non-empty list");
    c.seeds.clear();
    for (const auto& sd : seeds) c.seeds.push_back(detail::get_seed(sd, "seeds[]"));
    return c;
}

// ---------------------------------------------------------------------------
// Running

struct SeedResult {
    std::uint64_t seed = 0;
    RunMetrics metrics;
    std::vector<double> robust;  // per attack epsilon; empty without an attack
};

inline std::vector<int> layer_sizes(const ExperimentConfig& c, const Stream& s) {
    std::vector<int> sizes{s.dim};
    sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
    sizes.push_back(s.num_classes);
    return sizes;
}

/// One full run. The stream seed is offset by the run seed so that every
/// seed sees its own data draw; the model is initialised from the run seed.
inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed) {
    StreamSpec spec = c.stream;
    spec.seed = c.stream.seed + seed;
    const Stream stream = make_stream(spec);
    Mlp model = Mlp::random(layer_sizes(c, stream), seed);
    TrainConfig tc = c.train;
    tc.seed = seed;
    SeedResult r;
    r.seed = seed;
    r.metrics = run(stream, model, tc);
    if (c.attack) r.robust = pgd_attack(model, concat(stream.test_sets), *c.attack);
    return r;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline constexpr const char* kCsvHeader = "step,method,seed,avg_acc,task_accs,wall_ms";

inline std::string csv_rows(const SeedResult& r) {
    std::string out;
    for (const auto& row : r.metrics.rows) {
        std::string accs;
        for (std::size_t i = 0; i < row.task_accs.size(); ++i)
            accs += (i ? ";" : "") + format_double(row.task_accs[i]);
        out += std::to_string(row.step) + "," + row.method + "," + std::to_string(row.seed) + "," +
               format_double(row.avg_acc) + "," + accs + "," + format_double(row.wall_ms) + "\n";
    }
    return out;
}

/// Appends rows with a single write; the header is written only when the
/// file is new or empty.
inline void append_csv(const std::string& path, const std::string& rows) {
    namespace fs = std::filesystem;
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const std::string block = (fresh ? std::string(kCsvHeader) + "\n" : std::string()) + rows;
    out.write(block.data(), std::streamsize(block.size()));
    out.flush();
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= double(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, xs.size() > 1 ? std::sqrt(v / double(xs.size() - 1)) : 0.0};
}

inline json summarize(const ExperimentConfig& c, const std::vector<SeedResult>& results) {
    std::vector<double> finals, wall;
    for (const auto& r : results) {
        finals.push_back(r.metrics.final_row().avg_acc);
        wall.push_back(r.metrics.final_row().wall_ms);
    }
    const auto [m, sd] = mean_std(finals);
    json s = {{"method", std::string(to_string(c.train.method))},
              {"seeds", c.seeds},
              {"final_avg_acc", {{"mean", m}, {"std", sd}}},
              {"wall_ms", {{"mean", mean_std(wall).first}}}};
    if (c.attack) {
        json rob = json::array();
        for (std::size_t k = 0; k < c.attack->epsilons.size(); ++k) {
            std::vector<double> col;
            for (const auto& r : results) col.push_back(r.robust[k]);
            const auto [rm, rsd] = mean_std(col);
            rob.push_back({{"epsilon", c.attack->epsilons[k]}, {"mean", rm}, {"std", rsd}});
        }
        s["robust_acc"] = rob;
    }
    return s;
}

inline unsigned thread_budget() {
    if (const char* env = std::getenv("DRME_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return unsigned(n);
        } catch (const std::exception&) {
        }
        throw ConfigError("DRME_THREADS must be a positive integer");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs every seed, up to `threads` at a time. Results come back in seed
/// order regardless of completion order.
inline std::vector<SeedResult> run_all(const ExperimentConfig& c, unsigned threads) {
    std::vector<SeedResult> results(c.seeds.size());
    std::vector<std::exception_ptr> errors(c.seeds.size());
    std::size_t next = 0;
    std::mutex m;
    auto worker = [&] {
        while (true) {
            std::size_t i;
            {
                std::lock_guard lock(m);
                if (next == c.seeds.size()) return;
                i = next++;
            }
            try {
                results[i] = run_seed(c, c.seeds[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned n = std::min<unsigned>(threads, unsigned(c.seeds.size()));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

}  // namespace drme::cli
