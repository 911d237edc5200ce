#include "tvmerge/grid_search.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tvmerge/errors.hpp"
#include "tvmerge/log.hpp"
#include "tvmerge/parallel.hpp"
#include "tvmerge/subprocess.hpp"

namespace tvmerge {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kMicro = 1e6;

std::int64_t to_micro(double x) { return static_cast<std::int64_t>(std::llround(x * kMicro)); }
double from_micro(std::int64_t u) { return static_cast<double>(u) / kMicro; }

using Point = std::vector<std::int64_t>;  // one micro-lambda per axis

std::vector<std::int64_t> axis_points(std::int64_t lo, std::int64_t hi, std::int64_t step) {
    std::vector<std::int64_t> out;
    for (std::int64_t u = lo; u <= hi; u += step) out.push_back(u);
    return out;
}

std::vector<Point> cartesian(const std::vector<std::vector<std::int64_t>>& axes) {
    std::vector<Point> out{{}};
    for (const auto& axis : axes) {
        std::vector<Point> next;
        next.reserve(out.size() * axis.size());
        for (const auto& prefix : out)
            for (auto u : axis) {
                Point p = prefix;
                p.push_back(u);
                next.push_back(std::move(p));
            }
        out = std::move(next);
    }
    return out;
}

}  // namespace

SearchSpec parse_search_spec(const ordered_json& doc) {
    if (!doc.is_object()) throw ValidationError("search spec must be a JSON object");
    SearchSpec spec;
    if (!doc.contains("version") || !doc["version"].is_number_integer() ||
        doc["version"].get<int>() != 1)
        throw ValidationError("search spec: 'version' must be 1");

    if (doc.contains("recipe")) {
        spec.recipe = parse_recipe(doc["recipe"]);
    } else if (doc.contains("recipe_path")) {
        spec.recipe = load_recipe(doc["recipe_path"].get<std::string>());
    } else {
        throw ValidationError("search spec: needs 'recipe' or 'recipe_path'");
    }

    if (doc.contains("range")) {
        if (!doc["range"].is_array() || doc["range"].size() != 2)
            throw ValidationError("search spec: 'range' must be [lo, hi]");
        spec.lo = doc["range"][0].get<double>();
        spec.hi = doc["range"][1].get<double>();
    }  // default range stays [0, 3]

    if (doc.contains("coarse_step")) spec.coarse_step = doc["coarse_step"].get<double>();
    if (doc.contains("fine_step")) spec.fine_step = doc["fine_step"].get<double>();
    if (doc.contains("mode")) {
        const std::string m = doc["mode"].get<std::string>();
        if (m == "unified") spec.mode = SearchSpec::Mode::Unified;
        else if (m == "per_vector") spec.mode = SearchSpec::Mode::PerVector;
        else throw ValidationError("search spec: mode must be \"unified\" or \"per_vector\"");
    }
    if (!doc.contains("evaluator") || !doc["evaluator"].is_array())
        throw ValidationError("search spec: 'evaluator' must be an array of command words");
    for (const auto& a : doc["evaluator"]) spec.evaluator.push_back(a.get<std::string>());

    if (doc.contains("weights"))
        for (auto it = doc["weights"].begin(); it != doc["weights"].end(); ++it)
            spec.weights[it.key()] = it.value().get<double>();
    if (doc.contains("parallelism")) spec.parallelism = doc["parallelism"].get<int>();
    if (doc.contains("keep_intermediate"))
        spec.keep_intermediate = doc["keep_intermediate"].get<bool>();
    if (doc.contains("workdir")) spec.workdir = doc["workdir"].get<std::string>();
    if (doc.contains("table")) spec.table_path = doc["table"].get<std::string>();
    return spec;
}

SearchSpec load_search_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open search spec '" + path + "'");
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ValidationError("search spec '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        return parse_search_spec(doc);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("search spec '" + path + "': " + e.what());
    }
}

std::vector<std::string> validate_search_spec(const SearchSpec& spec) {
    std::vector<std::string> bad;
    if (!(spec.lo < spec.hi)) bad.push_back("range: lo must be < hi");
    if (!(spec.coarse_step > 0.0)) bad.push_back("coarse_step must be > 0");
    if (!(spec.fine_step > 0.0)) bad.push_back("fine_step must be > 0");
    if (spec.fine_step > spec.coarse_step) bad.push_back("fine_step must not exceed coarse_step");
    if (spec.evaluator.empty()) bad.push_back("evaluator command is empty");
    if (spec.parallelism < 1) bad.push_back("parallelism must be >= 1");
    if (spec.mode == SearchSpec::Mode::PerVector && spec.recipe.vectors.size() > 2)
        bad.push_back("per-vector search is limited to two task vectors (grid growth)");
    if (spec.recipe.unified_lambda) bad.push_back("recipe inside a search spec must not fix a unified lambda");
    for (const auto& v : spec.recipe.vectors)
        if (v.lambda) bad.push_back("recipe vector '" + v.name + "' must not fix a lambda");

    ValidateOptions opts;
    opts.require_lambda = false;
    opts.require_output = false;
    auto rec = validate_recipe(spec.recipe, opts);
    bad.insert(bad.end(), rec.begin(), rec.end());
    return bad;
}

EvalOutcome invoke_evaluator(const std::vector<std::string>& argv, const std::string& ckpt_path,
                             const std::map<std::string, double>& weights) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> cmd = argv;
    cmd.push_back(ckpt_path);
    const SubprocessResult sub = run_subprocess(cmd);
    if (sub.exit_code != 0)
        throw EvaluatorError("evaluator exited with code " + std::to_string(sub.exit_code));

    ordered_json doc;
    try {
        doc = ordered_json::parse(sub.out);
    } catch (const std::exception& e) {
        throw EvaluatorError(std::string("evaluator output is not a JSON object: ") + e.what());
    }
    if (!doc.is_object() || doc.empty())
        throw EvaluatorError("evaluator must print a non-empty JSON object of task scores");

    EvalOutcome out;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_number())
            throw EvaluatorError("score for task '" + it.key() + "' is not a number");
        const double s = it.value().get<double>();
        if (!std::isfinite(s))
            throw EvaluatorError("score for task '" + it.key() + "' is not finite");
        out.scores[it.key()] = s;
    }
    double num = 0.0, den = 0.0;
    for (const auto& [task, score] : out.scores) {
        const auto w = weights.count(task) ? weights.at(task) : 1.0;
        num += w * score;
        den += w;
    }
    out.objective = den > 0.0 ? num / den : 0.0;
    const auto t1 = std::chrono::steady_clock::now();
    out.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return out;
}

ordered_json SearchResult::to_json() const {
    ordered_json doc;
    doc["version"] = 1;
    doc["best"] = {{"lambda", best}, {"score", best_score}};
    doc["best_coarse"] = {{"lambda", best_coarse}, {"score", best_coarse_score}};
    doc["evaluations"] = evaluations;
    doc["points"] = rows.size();
    doc["table"] = table_path;
    return doc;
}

namespace {

struct SearchState {
    const SearchSpec& spec;
    RunOptions merge_opts;
    std::size_t axes = 0;
    std::map<Point, SearchRow> cache;
    std::set<std::string> task_set;
    bool task_set_known = false;
    std::size_t evaluations = 0;
    fs::path workdir;
    bool auto_workdir = false;

    explicit SearchState(const SearchSpec& s) : spec(s) {}

    void write_table(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write score table '" + path + "'");
        if (axes == 1) {
            out << "lambda";
        } else {
            for (std::size_t d = 0; d < axes; ++d)
                out << (d ? "," : "") << "lambda_" << spec.recipe.vectors[d].name;
        }
        for (const auto& t : task_set) out << ',' << t;
        out << ",mean\n";
        for (const auto& [point, row] : cache) {
            for (std::size_t d = 0; d < axes; ++d) out << (d ? "," : "") << row.lambdas[d];
            for (const auto& t : task_set) {
                out << ',';
                auto it = row.scores.find(t);
                if (it != row.scores.end()) out << it->second;
            }
            out << ',' << row.objective << '\n';
        }
    }

    MergeRecipe recipe_for(const Point& p, const std::string& out_path) const {
        MergeRecipe r = spec.recipe;
        r.output = out_path;
        r.report_path.reset();
        if (spec.mode == SearchSpec::Mode::Unified) {
            r.unified_lambda = from_micro(p[0]);
        } else {
            for (std::size_t d = 0; d < p.size(); ++d) r.vectors[d].lambda = from_micro(p[d]);
        }
        return r;
    }

    // Merge + evaluate one lattice point.
    SearchRow evaluate(const Point& p, std::size_t eval_index) {
        const fs::path out_path = workdir / ("eval_" + std::to_string(eval_index) + ".safetensors");
        const MergeRecipe recipe = recipe_for(p, out_path.string());
        RunOptions opts = merge_opts;
        opts.write_report_file = false;
        opts.allow_zero_lambda = true;
        run_recipe(recipe, opts);
        SearchRow row;
        try {
            const EvalOutcome outcome = invoke_evaluator(spec.evaluator, out_path.string(), spec.weights);
            row.scores = outcome.scores;
            row.objective = outcome.objective;
        } catch (...) {
            if (!spec.keep_intermediate) fs::remove(out_path);
            throw;
        }
        if (!spec.keep_intermediate) fs::remove(out_path);
        for (auto u : p) row.lambdas.push_back(from_micro(u));
        return row;
    }

    // Evaluates every uncached point of a pass; logs each invocation once.
    void run_pass(const std::vector<Point>& points) {
        std::vector<Point> todo;
        for (const auto& p : points)
            if (!cache.count(p)) todo.push_back(p);

        std::vector<SearchRow> results(todo.size());
        std::vector<char> done(todo.size(), 0);
        const std::size_t base_index = evaluations;
        try {
            parallel_for(0, todo.size(), spec.parallelism, [&](std::size_t i) {
                results[i] = evaluate(todo[i], base_index + i);
                done[i] = 1;
            });
        } catch (...) {
            // Keep whatever finished, save the partial table, then abort.
            for (std::size_t i = 0; i < todo.size(); ++i) {
                if (!done[i]) continue;
                note_tasks(results[i]);
                cache.emplace(todo[i], std::move(results[i]));
            }
            evaluations += static_cast<std::size_t>(
                std::count(done.begin(), done.end(), static_cast<char>(1)));
            write_table(spec.table_path);
            throw;
        }
        for (std::size_t i = 0; i < todo.size(); ++i) {
            note_tasks(results[i]);
            log_info("evaluated lambda %s -> %.6f", point_str(todo[i]).c_str(),
                     results[i].objective);
            cache.emplace(todo[i], std::move(results[i]));
        }
        evaluations += todo.size();
    }

    void note_tasks(const SearchRow& row) {
        std::set<std::string> tasks;
        for (const auto& [t, s] : row.scores) tasks.insert(t);
        if (!task_set_known) {
            task_set = tasks;
            task_set_known = true;
        } else if (tasks != task_set) {
            throw EvaluatorError("evaluator returned an inconsistent task set");
        }
    }

    static std::string point_str(const Point& p) {
        std::string s;
        for (std::size_t d = 0; d < p.size(); ++d) {
            if (d) s += ",";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6g", from_micro(p[d]));
            s += buf;
        }
        return s;
    }

    // Argmax over a point set, ties to the lexicographically smaller tuple.
    std::pair<Point, double> best_of(const std::vector<Point>& points) const {
        bool have = false;
        Point best;
        double best_score = 0.0;
        for (const auto& p : points) {
            auto it = cache.find(p);
            if (it == cache.end()) continue;
            if (!have || it->second.objective > best_score) {
                have = true;
                best = p;
                best_score = it->second.objective;
            }
        }
        if (!have) throw InternalError("argmax over an empty point set");
        return {best, best_score};
    }
};

}  // namespace

SearchResult grid_search(const SearchSpec& spec, const RunOptions& merge_opts) {
    {
        const auto violations = validate_search_spec(spec);
        if (!violations.empty()) {
            std::string msg = "search spec validation failed:";
            for (const auto& v : violations) msg += "\n  - " + v;
            throw ValidationError(msg);
        }
    }

    SearchState state(spec);
    state.merge_opts = merge_opts;
    state.axes = spec.mode == SearchSpec::Mode::Unified ? 1 : spec.recipe.vectors.size();

    if (spec.workdir.empty()) {
        state.workdir = fs::temp_directory_path() /
                        ("tvmerge-search-" + std::to_string(::getpid()));
        state.auto_workdir = true;
    } else {
        state.workdir = spec.workdir;
    }
    fs::create_directories(state.workdir);

    const std::int64_t lo = to_micro(spec.lo);
    const std::int64_t hi = to_micro(spec.hi);
    const std::int64_t coarse = to_micro(spec.coarse_step);
    const std::int64_t fine = to_micro(spec.fine_step);
    if (coarse <= 0 || fine <= 0)
        throw ValidationError("search steps are below the 1e-6 lambda resolution");

    SearchResult result;
    result.table_path = spec.table_path;
    try {
        // Coarse pass over the whole range.
        const auto coarse_axis = axis_points(lo, hi, coarse);
        const auto coarse_points = cartesian(std::vector(state.axes, coarse_axis));
        state.run_pass(coarse_points);
        auto [coarse_best, coarse_score] = state.best_of(coarse_points);
        result.best_coarse_score = coarse_score;
        for (auto u : coarse_best) result.best_coarse.push_back(from_micro(u));

        // Fine pass around the coarse winner, clamped to the range.
        std::vector<std::vector<std::int64_t>> fine_axes;
        for (std::size_t d = 0; d < state.axes; ++d) {
            const std::int64_t flo = std::max(lo, coarse_best[d] - coarse);
            const std::int64_t fhi = std::min(hi, coarse_best[d] + coarse);
            fine_axes.push_back(axis_points(flo, fhi, fine));
        }
        const auto fine_points = cartesian(fine_axes);
        state.run_pass(fine_points);

        // Final winner over everything scored, ties to the smaller lambda.
        std::vector<Point> all_points;
        all_points.reserve(state.cache.size());
        for (const auto& [p, row] : state.cache) all_points.push_back(p);
        auto [best, best_score] = state.best_of(all_points);
        result.best_score = best_score;
        for (auto u : best) result.best.push_back(from_micro(u));
    } catch (...) {
        try {
            state.write_table(spec.table_path);
        } catch (...) {
        }
        if (state.auto_workdir && !spec.keep_intermediate) {
            std::error_code ec;
            fs::remove_all(state.workdir, ec);
        }
        throw;
    }

    state.write_table(spec.table_path);
    result.evaluations = state.evaluations;
    for (const auto& [p, row] : state.cache) result.rows.push_back(row);

    if (state.auto_workdir && !spec.keep_intermediate) {
        std::error_code ec;
        fs::remove_all(state.workdir, ec);
    }
    return result;
}

}  // namespace tvmerge
