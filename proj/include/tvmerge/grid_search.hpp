#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvmerge/merge_engine.hpp"
#include "tvmerge/recipe.hpp"

namespace tvmerge {

// Two-step scaling-coefficient search: a coarse pass over [lo, hi], then a
// fine pass over [best - coarse_step, best + coarse_step] clamped to the
// range. Ties go to the smaller lambda (lexicographically in per-vector
// mode). Lambdas live on an exact micro-unit lattice so cached points are
// never re-evaluated.
struct SearchSpec {
    enum class Mode { Unified, PerVector };

    MergeRecipe recipe;  // lambda-free; output is assigned per grid point
    double lo = 0.0, hi = 3.0;
    double coarse_step = 0.1;
    double fine_step = 0.01;
    Mode mode = Mode::Unified;
    std::vector<std::string> evaluator;  // program + fixed arguments
    std::map<std::string, double> weights;  // objective weights, default 1 per task
    int parallelism = 1;
    bool keep_intermediate = false;
    std::string workdir;     // empty: auto temp dir, removed afterwards
    std::string table_path = "search_table.csv";
};

SearchSpec parse_search_spec(const nlohmann::ordered_json& doc);
SearchSpec load_search_spec(const std::string& path);
std::vector<std::string> validate_search_spec(const SearchSpec& spec);

struct EvalOutcome {
    std::map<std::string, double> scores;
    double objective = 0.0;
    double wall_seconds = 0.0;
};

// Contract: the command is invoked as `<evaluator...> <checkpoint-path>` and
// must print exactly one JSON object {task: score} on stdout and exit 0.
EvalOutcome invoke_evaluator(const std::vector<std::string>& argv, const std::string& ckpt_path,
                             const std::map<std::string, double>& weights);

struct SearchRow {
    std::vector<double> lambdas;
    std::map<std::string, double> scores;
    double objective = 0.0;
};

struct SearchResult {
    std::vector<SearchRow> rows;  // every scored point, ascending by lambda
    std::vector<double> best;
    double best_score = 0.0;
    std::vector<double> best_coarse;
    double best_coarse_score = 0.0;
    std::size_t evaluations = 0;  // actual evaluator invocations
    std::string table_path;

    nlohmann::ordered_json to_json() const;
};

SearchResult grid_search(const SearchSpec& spec, const RunOptions& merge_opts = {});

}  // namespace tvmerge
