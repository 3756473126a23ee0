#pragma once

// JSON run configuration. Every object is checked against a fixed key set and
// errors carry the line of the offending key in the source text.

#include "doblab/harness.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace doblab {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, int line, const std::string& field, const std::string& message)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + (field.empty() ? "" : field + ": ") + message),
          line_(line),
          field_(field) {}

    int line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    int line_;
    std::string field_;
};

struct RunConfig {
    MonteCarloConfig mc;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
};

namespace detail {

class ConfigReader {
public:
    ConfigReader(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

    const std::string& text() const { return text_; }

    [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& message) const {
        throw ConfigError(source_, line_of(path), join(path), message);
    }

    int line_of(const std::vector<std::string>& path) const {
        std::size_t pos = 0;
        bool found = false;
        for (const auto& key : path) {
            if (!key.empty() && key.front() == '[') continue;
            const std::size_t at = text_.find('"' + key + '"', pos);
            if (at == std::string::npos) break;
            pos = at;
            found = true;
        }
        return found ? line_at(pos) : 1;
    }

    int line_at(std::size_t pos) const {
        int line = 1;
        for (std::size_t i = 0; i < pos && i < text_.size(); ++i) line += text_[i] == '\n';
        return line;
    }

    static std::string join(const std::vector<std::string>& path) {
        std::string out;
        for (const auto& p : path) {
            if (!out.empty() && p.front() != '[') out += '.';
            out += p;
        }
        return out;
    }

    void expect_keys(const nlohmann::json& obj, const std::vector<std::string>& path,
                     const std::set<std::string>& allowed) const {
        if (!obj.is_object()) fail(path, "expected an object");
        for (const auto& [key, value] : obj.items()) {
            if (!allowed.count(key)) {
                auto p = path;
                p.push_back(key);
                fail(p, "unknown key");
            }
        }
    }

    double number(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_number()) fail(path, "expected a number");
        return v.get<double>();
    }

    double positive(const nlohmann::json& v, const std::vector<std::string>& path) const {
        const double x = number(v, path);
        if (!(x > 0.0) || !std::isfinite(x)) fail(path, "must be a positive number");
        return x;
    }

    std::int64_t integer(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_number_integer()) fail(path, "expected an integer");
        return v.get<std::int64_t>();
    }

    std::vector<double> numbers(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_array()) fail(path, "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            auto p = path;
            p.push_back("[" + std::to_string(i) + "]");
            out.push_back(number(v[i], p));
        }
        return out;
    }

    Matrix matrix(const nlohmann::json& v, const std::vector<std::string>& path) const {
        if (!v.is_array() || v.empty()) fail(path, "expected a nonempty array of rows");
        const std::size_t rows = v.size();
        std::size_t cols = 0;
        Matrix out;
        for (std::size_t i = 0; i < rows; ++i) {
            auto p = path;
            p.push_back("[" + std::to_string(i) + "]");
            const auto row = numbers(v[i], p);
            if (i == 0) {
                cols = row.size();
                if (cols == 0) fail(p, "rows must be nonempty");
                out.resize(static_cast<Index>(rows), static_cast<Index>(cols));
            } else if (row.size() != cols) {
                fail(p, "rows must have equal length");
            }
            for (std::size_t j = 0; j < cols; ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = row[j];
        }
        return out;
    }

private:
    std::string text_;
    std::string source_;
};

/// D from either "eta" (times D*) or "D" (absolute variance); default D*.
inline Matrix read_disturbance_cov(const ConfigReader& r, const nlohmann::json& e, const std::vector<std::string>& path,
                                   const Matrix& D_star) {
    if (e.contains("eta") && e.contains("D")) r.fail(path, "give either eta or D, not both");
    if (e.contains("eta")) {
        auto p = path;
        p.push_back("eta");
        return r.positive(e["eta"], p) * D_star;
    }
    if (e.contains("D")) {
        auto p = path;
        p.push_back("D");
        return Matrix::Constant(1, 1, r.positive(e["D"], p));
    }
    return D_star;
}

inline EstimatorSpec read_estimator(const ConfigReader& r, const nlohmann::json& e,
                                    const std::vector<std::string>& path, const LinearSystem& sys,
                                    const Matrix& D_star) {
    if (!e.is_object()) r.fail(path, "expected an object");
    if (!e.contains("kind") || !e["kind"].is_string()) r.fail(path, "kind is required");
    const std::string kind = e["kind"].get<std::string>();
    auto sub = [&](const char* key) {
        auto p = path;
        p.push_back(key);
        return p;
    };
    EstimatorSpec spec;
    spec.name = kind;
    if (e.contains("name")) {
        if (!e["name"].is_string()) r.fail(sub("name"), "expected a string");
        spec.name = e["name"].get<std::string>();
    }
    if (spec.name.empty() || spec.name.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-") !=
                                 std::string::npos) {
        r.fail(sub("name"), "names may only contain letters, digits, '_' and '-'");
    }

    if (kind == "kf_dob") {
        r.expect_keys(e, path, {"kind", "name", "eta", "D"});
        spec.kind = KfDobSpec{read_disturbance_cov(r, e, path, D_star)};
    } else if (kind == "nkf_dob") {
        r.expect_keys(e, path, {"kind", "name", "eta", "D"});
        spec.kind = NkfDobSpec{read_disturbance_cov(r, e, path, D_star)};
    } else if (kind == "sise") {
        r.expect_keys(e, path, {"kind", "name"});
        spec.kind = SiseSpec{};
    } else if (kind == "mkckf_dob") {
        r.expect_keys(e, path, {"kind", "name", "eta", "D", "sigma_d", "epsilon", "max_iters"});
        const double sigma_d = e.contains("sigma_d") ? r.positive(e["sigma_d"], sub("sigma_d")) : 3.0;
        MkcConfig cfg = MkcConfig::for_system(sys, sigma_d);
        if (e.contains("epsilon")) cfg.epsilon = r.positive(e["epsilon"], sub("epsilon"));
        if (e.contains("max_iters")) {
            const auto it = r.integer(e["max_iters"], sub("max_iters"));
            if (it < 1 || it > 100000) r.fail(sub("max_iters"), "must be between 1 and 100000");
            cfg.max_iters = static_cast<int>(it);
        }
        spec.kind = MkcKfDobSpec{read_disturbance_cov(r, e, path, D_star), cfg};
    } else if (kind == "immkf_dob") {
        r.expect_keys(e, path, {"kind", "name", "etas", "D_list", "transition", "mode_probs"});
        ImmKfDobSpec imm;
        if (e.contains("etas") == e.contains("D_list")) r.fail(path, "give exactly one of etas or D_list");
        const bool by_eta = e.contains("etas");
        const auto values = r.numbers(by_eta ? e["etas"] : e["D_list"], sub(by_eta ? "etas" : "D_list"));
        if (values.empty()) r.fail(sub(by_eta ? "etas" : "D_list"), "must not be empty");
        for (double v : values) {
            if (!(v > 0.0) || !std::isfinite(v)) r.fail(sub(by_eta ? "etas" : "D_list"), "entries must be positive");
            imm.D_list.push_back(by_eta ? Matrix(v * D_star) : Matrix::Constant(1, 1, v));
        }
        const auto q = static_cast<Index>(values.size());
        if (!e.contains("transition")) r.fail(sub("transition"), "is required");
        imm.transition = r.matrix(e["transition"], sub("transition"));
        if (imm.transition.rows() != q || imm.transition.cols() != q) {
            r.fail(sub("transition"), "must be " + std::to_string(q) + "x" + std::to_string(q));
        }
        if (e.contains("mode_probs")) {
            const auto mu = r.numbers(e["mode_probs"], sub("mode_probs"));
            if (static_cast<Index>(mu.size()) != q) r.fail(sub("mode_probs"), "needs one entry per model");
            imm.mode_probs = Eigen::Map<const Vector>(mu.data(), q);
        }
        ImmState probe;
        probe.beliefs.resize(static_cast<std::size_t>(q));
        probe.transition = imm.transition;
        probe.mode_probs = imm.mode_probs.size() > 0 ? imm.mode_probs : Vector::Constant(q, 1.0 / static_cast<double>(q));
        try {
            probe.validate();
        } catch (const ModelError& err) {
            r.fail(sub("transition"), err.what());
        }
        spec.kind = std::move(imm);
    } else {
        r.fail(sub("kind"), "unknown estimator kind '" + kind + "'");
    }
    return spec;
}

}  // namespace detail

/**
 * @brief Parses a run configuration.
 *
 * @param seed_override replaces scenario.seed when set (DOBLAB_SEED).
 * @param require_eta_grid rejects a missing or empty harness.eta_grid.
 */
inline RunConfig parse_run_config(const std::string& text, const std::string& source,
                                  std::optional<std::uint64_t> seed_override = std::nullopt,
                                  bool require_eta_grid = false) {
    using detail::ConfigReader;
    const ConfigReader r(text, source);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(source, r.line_at(e.byte > 0 ? e.byte - 1 : 0), "", "malformed JSON");
    }
    r.expect_keys(root, {}, {"scenario", "estimators", "harness", "output"});

    RunConfig cfg;
    double T = kDefaultSampleTime, q_x = kDefaultProcessNoise, meas = kDefaultMeasurementNoise;
    double d_star = kDefaultNominalD;
    std::optional<double> truth_d_var;
    DisturbanceProfile profile = default_profile();
    GaussianBelief initial{Vector::Zero(2), 1e-2 * Matrix::Identity(2, 2)};

    if (root.contains("scenario")) {
        const auto& s = root["scenario"];
        r.expect_keys(s, {"scenario"}, {"T", "q_x", "r", "d_star", "steps", "seed", "profile", "initial"});
        if (s.contains("T")) T = r.positive(s["T"], {"scenario", "T"});
        if (s.contains("q_x")) q_x = r.positive(s["q_x"], {"scenario", "q_x"});
        if (s.contains("r")) meas = r.positive(s["r"], {"scenario", "r"});
        if (s.contains("d_star")) d_star = r.positive(s["d_star"], {"scenario", "d_star"});
        if (s.contains("steps")) {
            const auto steps = r.integer(s["steps"], {"scenario", "steps"});
            if (steps < 1 || steps > 10000000) r.fail({"scenario", "steps"}, "must be between 1 and 10000000");
            cfg.mc.steps = steps;
        }
        if (s.contains("seed")) {
            if (!s["seed"].is_number_unsigned() && !(s["seed"].is_number_integer() && s["seed"].get<std::int64_t>() >= 0)) {
                r.fail({"scenario", "seed"}, "must be a nonnegative integer");
            }
            cfg.seed = s["seed"].get<std::uint64_t>();
        }
        if (s.contains("profile")) {
            const auto& p = s["profile"];
            r.expect_keys(p, {"scenario", "profile"}, {"segments", "noise_var"});
            if (p.contains("noise_var")) {
                const double v = r.number(p["noise_var"], {"scenario", "profile", "noise_var"});
                if (!(v >= 0.0) || !std::isfinite(v)) r.fail({"scenario", "profile", "noise_var"}, "must be >= 0");
                truth_d_var = v;
            }
            if (p.contains("segments")) {
                const auto& segs = p["segments"];
                const std::vector<std::string> sp{"scenario", "profile", "segments"};
                if (!segs.is_array() || segs.empty()) r.fail(sp, "expected a nonempty array");
                profile.segments.clear();
                for (std::size_t i = 0; i < segs.size(); ++i) {
                    auto ep = sp;
                    ep.push_back("[" + std::to_string(i) + "]");
                    r.expect_keys(segs[i], ep, {"start", "level"});
                    if (!segs[i].contains("start") || !segs[i].contains("level")) r.fail(ep, "needs start and level");
                    auto ps = ep, pl = ep;
                    ps.push_back("start");
                    pl.push_back("level");
                    profile.segments.push_back({r.integer(segs[i]["start"], ps), r.number(segs[i]["level"], pl)});
                }
            }
        }
        if (s.contains("initial")) {
            const auto& in = s["initial"];
            r.expect_keys(in, {"scenario", "initial"}, {"mean", "cov"});
            if (in.contains("mean")) {
                const auto mean = r.numbers(in["mean"], {"scenario", "initial", "mean"});
                if (mean.size() != 2) r.fail({"scenario", "initial", "mean"}, "needs 2 entries");
                initial.mean = Eigen::Map<const Vector>(mean.data(), 2);
            }
            if (in.contains("cov")) {
                initial.cov = r.matrix(in["cov"], {"scenario", "initial", "cov"});
                if (initial.cov.rows() != 2 || initial.cov.cols() != 2) r.fail({"scenario", "initial", "cov"}, "must be 2x2");
                if (!is_psd(initial.cov)) r.fail({"scenario", "initial", "cov"}, "must be symmetric PSD");
            }
        }
    }
    profile.noise_cov = Matrix::Constant(1, 1, truth_d_var.value_or(d_star));
    try {
        profile.validate();
    } catch (const ModelError& e) {
        r.fail({"scenario", "profile", "segments"}, e.what());
    }

    cfg.mc.sys = default_tracking_system(T, q_x, meas);
    cfg.mc.profile = profile;
    cfg.mc.initial = initial;
    cfg.mc.sample_time = T;
    cfg.mc.D_star = Matrix::Constant(1, 1, d_star);

    if (root.contains("estimators")) {
        const auto& es = root["estimators"];
        if (!es.is_array()) r.fail({"estimators"}, "expected an array");
        std::set<std::string> names;
        for (std::size_t i = 0; i < es.size(); ++i) {
            const std::vector<std::string> path{"estimators", "[" + std::to_string(i) + "]"};
            EstimatorSpec spec = detail::read_estimator(r, es[i], path, cfg.mc.sys, cfg.mc.D_star);
            if (!names.insert(spec.name).second || spec.name.rfind("kf_dob_eta", 0) == 0) {
                r.fail({"estimators", "name"}, "duplicate or reserved estimator name '" + spec.name + "'");
            }
            cfg.mc.estimators.push_back(std::move(spec));
        }
    }

    if (root.contains("harness")) {
        const auto& h = root["harness"];
        r.expect_keys(h, {"harness"}, {"trials", "window", "eta_grid", "threads"});
        if (h.contains("trials")) {
            const auto k = r.integer(h["trials"], {"harness", "trials"});
            if (k < 1 || k > 1000000) r.fail({"harness", "trials"}, "must be between 1 and 1000000");
            cfg.mc.trials = k;
        }
        if (h.contains("window")) {
            const auto w = r.numbers(h["window"], {"harness", "window"});
            if (w.size() != 2 || w[0] != std::floor(w[0]) || w[1] != std::floor(w[1])) {
                r.fail({"harness", "window"}, "expected [first, last] step indices");
            }
            cfg.mc.window = {static_cast<Index>(w[0]), static_cast<Index>(w[1])};
        }
        if (h.contains("eta_grid")) {
            cfg.mc.eta_grid = r.numbers(h["eta_grid"], {"harness", "eta_grid"});
            for (double eta : cfg.mc.eta_grid) {
                if (!(eta > 0.0) || !std::isfinite(eta)) r.fail({"harness", "eta_grid"}, "entries must be positive");
            }
        }
        if (h.contains("threads")) {
            const auto t = r.integer(h["threads"], {"harness", "threads"});
            if (t < 0 || t > 1024) r.fail({"harness", "threads"}, "must be between 0 and 1024");
            cfg.mc.threads = static_cast<unsigned>(t);
        }
    }
    if (require_eta_grid && cfg.mc.eta_grid.empty()) {
        r.fail({"harness", "eta_grid"}, "must be a nonempty list of eta values");
    }
    if (cfg.mc.window.first < 1 || cfg.mc.window.first > cfg.mc.window.last || cfg.mc.window.last > cfg.mc.steps) {
        if (root.contains("harness") && root["harness"].contains("window")) {
            r.fail({"harness", "window"}, "must satisfy 1 <= first <= last <= steps");
        }
        // default window does not fit a short run; fall back to the whole run
        cfg.mc.window = {1, cfg.mc.steps};
    }

    if (root.contains("output")) {
        if (!root["output"].is_string() || root["output"].get<std::string>().empty()) {
            r.fail({"output"}, "expected a nonempty string");
        }
        cfg.output_dir = root["output"].get<std::string>();
    }
    if (seed_override) cfg.seed = *seed_override;
    cfg.mc.base_seed = cfg.seed;
    return cfg;
}

}  // namespace doblab
