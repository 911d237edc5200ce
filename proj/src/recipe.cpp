#include "tvmerge/recipe.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "tvmerge/errors.hpp"

namespace tvmerge {

using ordered_json = nlohmann::ordered_json;

const char* method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::TaskArithmetic: return "task_arithmetic";
        case MergeMethod::Dare: return "dare";
        case MergeMethod::MagnitudeLayer: return "magnitude_layer";
        case MergeMethod::MagnitudeRow: return "magnitude_row";
        case MergeMethod::Ties: return "ties";
        case MergeMethod::Cabs: return "cabs";
        case MergeMethod::CaOnly: return "ca_only";
        case MergeMethod::BsOnly: return "bs_only";
    }
    return "?";
}

std::optional<MergeMethod> method_from_name(std::string_view name) {
    static const std::pair<std::string_view, MergeMethod> table[] = {
        {"task_arithmetic", MergeMethod::TaskArithmetic},
        {"dare", MergeMethod::Dare},
        {"magnitude_layer", MergeMethod::MagnitudeLayer},
        {"magnitude_row", MergeMethod::MagnitudeRow},
        {"ties", MergeMethod::Ties},
        {"cabs", MergeMethod::Cabs},
        {"ca_only", MergeMethod::CaOnly},
        {"bs_only", MergeMethod::BsOnly},
    };
    for (const auto& [n, m] : table)
        if (n == name) return m;
    return std::nullopt;
}

double MergeRecipe::lambda_for(std::size_t i) const {
    if (unified_lambda) return *unified_lambda;
    if (i < vectors.size() && vectors[i].lambda) return *vectors[i].lambda;
    throw ValidationError("no scaling coefficient for vector '" +
                          (i < vectors.size() ? vectors[i].name : std::to_string(i)) + "'");
}

bool MergeRecipe::rescale_enabled() const {
    if (rescale) return *rescale;
    return method == MergeMethod::Dare;
}

double MergeRecipe::effective_keep_fraction() const {
    if (keep_fraction) return *keep_fraction;
    if (n && m && *m > 0) return static_cast<double>(*n) / static_cast<double>(*m);
    return 1.0;
}

bool MergeRecipe::uses_blocks() const {
    return method == MergeMethod::Cabs || method == MergeMethod::BsOnly;
}

bool MergeRecipe::uses_conflict_aware() const {
    return method == MergeMethod::Cabs || method == MergeMethod::CaOnly;
}

std::vector<std::size_t> MergeRecipe::ca_order_indices() const {
    std::vector<std::size_t> idx(vectors.size());
    if (order.empty()) {
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return idx;
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto it = std::find_if(vectors.begin(), vectors.end(),
                               [&](const RecipeVector& v) { return v.name == order[i]; });
        if (it == vectors.end())
            throw ValidationError("order references unknown vector '" + order[i] + "'");
        idx[i] = static_cast<std::size_t>(it - vectors.begin());
    }
    return idx;
}

namespace {

template <typename T>
std::optional<T> take_number(const ordered_json& j, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    if (!j[key].is_number()) throw ValidationError(std::string("recipe: '") + key + "' must be a number");
    return j[key].get<T>();
}

}  // namespace

MergeRecipe parse_recipe(const ordered_json& doc) {
    if (!doc.is_object()) throw ValidationError("recipe must be a JSON object");
    static const std::set<std::string> known = {
        "version", "base", "output", "vectors", "unified_lambda", "method", "keep_fraction",
        "n", "m", "rescale", "seed", "order", "overlap_fill", "report", "masked_vectors_dir",
    };

    MergeRecipe r;
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!known.count(it.key())) r.unknown_keys.push_back(it.key());

    if (doc.contains("version")) {
        if (!doc["version"].is_number_integer())
            throw ValidationError("recipe: 'version' must be an integer");
        r.version = doc["version"].get<int>();
    } else {
        r.version = 0;  // flagged by validate
    }
    if (doc.contains("base")) {
        if (!doc["base"].is_string()) throw ValidationError("recipe: 'base' must be a string");
        r.base = doc["base"].get<std::string>();
    }
    if (doc.contains("output")) {
        if (!doc["output"].is_string()) throw ValidationError("recipe: 'output' must be a string");
        r.output = doc["output"].get<std::string>();
    }
    if (doc.contains("method")) {
        if (!doc["method"].is_string()) throw ValidationError("recipe: 'method' must be a string");
        auto m = method_from_name(doc["method"].get<std::string>());
        if (!m) throw ValidationError("recipe: unknown method '" + doc["method"].get<std::string>() + "'");
        r.method = *m;
    } else {
        throw ValidationError("recipe: 'method' is required");
    }

    if (doc.contains("vectors")) {
        if (!doc["vectors"].is_array()) throw ValidationError("recipe: 'vectors' must be an array");
        for (const auto& v : doc["vectors"]) {
            if (!v.is_object()) throw ValidationError("recipe: vector entries must be objects");
            RecipeVector rv;
            if (v.contains("name")) rv.name = v["name"].get<std::string>();
            if (v.contains("path")) rv.path = v["path"].get<std::string>();
            if (v.contains("lambda")) {
                if (!v["lambda"].is_number())
                    throw ValidationError("recipe: vector 'lambda' must be a number");
                rv.lambda = v["lambda"].get<double>();
            }
            if (v.contains("delta")) {
                if (!v["delta"].is_boolean())
                    throw ValidationError("recipe: vector 'delta' must be a boolean");
                rv.is_delta = v["delta"].get<bool>();
            }
            for (auto it = v.begin(); it != v.end(); ++it) {
                const std::string& k = it.key();
                if (k != "name" && k != "path" && k != "lambda" && k != "delta")
                    r.unknown_keys.push_back("vectors." + k);
            }
            r.vectors.push_back(std::move(rv));
        }
    }

    r.unified_lambda = take_number<double>(doc, "unified_lambda");
    r.keep_fraction = take_number<double>(doc, "keep_fraction");
    r.n = take_number<int>(doc, "n");
    r.m = take_number<int>(doc, "m");
    if (doc.contains("rescale")) {
        if (!doc["rescale"].is_boolean()) throw ValidationError("recipe: 'rescale' must be a boolean");
        r.rescale = doc["rescale"].get<bool>();
    }
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_integer())
            throw ValidationError("recipe: 'seed' must be an integer");
        r.seed = doc["seed"].get<std::uint64_t>();
    }
    if (doc.contains("order")) {
        if (!doc["order"].is_array()) throw ValidationError("recipe: 'order' must be an array");
        for (const auto& o : doc["order"]) r.order.push_back(o.get<std::string>());
    }
    if (doc.contains("overlap_fill")) {
        const std::string f = doc["overlap_fill"].get<std::string>();
        if (f == "block") r.overlap_fill = OverlapFill::Block;
        else if (f == "tensor") r.overlap_fill = OverlapFill::Tensor;
        else throw ValidationError("recipe: 'overlap_fill' must be \"block\" or \"tensor\"");
    }
    if (doc.contains("report")) r.report_path = doc["report"].get<std::string>();
    if (doc.contains("masked_vectors_dir"))
        r.masked_vectors_dir = doc["masked_vectors_dir"].get<std::string>();
    return r;
}

MergeRecipe load_recipe(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open recipe '" + path + "'");
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ValidationError("recipe '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        return parse_recipe(doc);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("recipe '" + path + "': " + e.what());
    }
}

ordered_json recipe_to_json(const MergeRecipe& r) {
    ordered_json doc;
    doc["version"] = r.version;
    doc["base"] = r.base;
    doc["method"] = method_name(r.method);
    doc["vectors"] = ordered_json::array();
    for (const auto& v : r.vectors) {
        ordered_json jv;
        jv["name"] = v.name;
        jv["path"] = v.path;
        if (v.lambda) jv["lambda"] = *v.lambda;
        if (v.is_delta) jv["delta"] = true;
        doc["vectors"].push_back(std::move(jv));
    }
    if (r.unified_lambda) doc["unified_lambda"] = *r.unified_lambda;
    if (r.keep_fraction) doc["keep_fraction"] = *r.keep_fraction;
    if (r.n) doc["n"] = *r.n;
    if (r.m) doc["m"] = *r.m;
    if (r.rescale) doc["rescale"] = *r.rescale;
    if (r.seed) doc["seed"] = *r.seed;
    if (!r.order.empty()) doc["order"] = r.order;
    if (r.overlap_fill == OverlapFill::Tensor) doc["overlap_fill"] = "tensor";
    if (r.report_path) doc["report"] = *r.report_path;
    if (r.masked_vectors_dir) doc["masked_vectors_dir"] = *r.masked_vectors_dir;
    doc["output"] = r.output;
    return doc;
}

std::vector<std::string> validate_recipe(const MergeRecipe& r, const ValidateOptions& opts) {
    std::vector<std::string> bad;
    auto flag = [&bad](std::string msg) { bad.push_back(std::move(msg)); };

    if (r.version != 1) flag("recipe version must be 1");
    for (const auto& k : r.unknown_keys) flag("unknown recipe field '" + k + "'");
    if (r.base.empty()) flag("'base' is required");
    if (opts.require_output && r.output.empty()) flag("'output' is required");
    if (r.vectors.empty()) flag("at least one task vector is required");

    std::set<std::string> names;
    for (const auto& v : r.vectors) {
        if (v.name.empty()) flag("every vector needs a non-empty 'name'");
        if (v.path.empty()) flag("vector '" + v.name + "' needs a 'path'");
        if (!names.insert(v.name).second) flag("duplicate vector name '" + v.name + "'");
        if (!v.path.empty() && !r.output.empty() && v.path == r.output)
            flag("output path collides with vector '" + v.name + "'");
    }
    if (!r.base.empty() && !r.output.empty() && r.base == r.output)
        flag("output path collides with the base checkpoint");

    auto lambda_ok = [&opts](double l) { return opts.allow_zero_lambda ? l >= 0.0 : l > 0.0; };
    if (r.unified_lambda) {
        if (!lambda_ok(*r.unified_lambda)) flag("unified lambda must be > 0");
    } else if (opts.require_lambda) {
        for (const auto& v : r.vectors) {
            if (!v.lambda) flag("vector '" + v.name + "' has no lambda and no unified lambda is set");
            else if (!lambda_ok(*v.lambda)) flag("lambda for vector '" + v.name + "' must be > 0");
        }
    } else {
        for (const auto& v : r.vectors)
            if (v.lambda && !lambda_ok(*v.lambda))
                flag("lambda for vector '" + v.name + "' must be > 0");
    }

    const bool has_keep = r.keep_fraction.has_value();
    const bool has_nm = r.n.has_value() || r.m.has_value();
    if (r.keep_fraction && (!(*r.keep_fraction > 0.0) || *r.keep_fraction > 1.0))
        flag("keep_fraction must be in (0, 1]");
    if (r.n && *r.n < 1) flag("n must be >= 1");
    if (r.m && *r.m < 1) flag("m must be >= 1");
    if (r.n && r.m && *r.n > *r.m) flag("n must not exceed m");
    if (has_nm && (!r.n || !r.m)) flag("n and m must be given together");

    switch (r.method) {
        case MergeMethod::TaskArithmetic:
            if (has_keep || has_nm) flag("task_arithmetic takes no sparsity parameters");
            break;
        case MergeMethod::Dare:
            if (!has_keep) flag("dare requires keep_fraction");
            if (has_nm) flag("dare does not take n:m parameters");
            if (!r.seed) flag("dare requires a seed for reproducible masks");
            break;
        case MergeMethod::MagnitudeLayer:
        case MergeMethod::MagnitudeRow:
        case MergeMethod::Ties:
        case MergeMethod::CaOnly:
            if (!has_keep) flag(std::string(method_name(r.method)) + " requires keep_fraction");
            if (has_nm) flag(std::string(method_name(r.method)) + " does not take n:m parameters");
            break;
        case MergeMethod::Cabs:
        case MergeMethod::BsOnly:
            if (!r.n || !r.m) flag(std::string(method_name(r.method)) + " requires n and m");
            if (has_keep) flag(std::string(method_name(r.method)) + " takes n:m, not keep_fraction");
            break;
    }

    if ((r.method == MergeMethod::Ties || r.uses_conflict_aware()) && r.vectors.size() < 2)
        flag(std::string(method_name(r.method)) + " needs at least two task vectors");

    if (!r.order.empty()) {
        if (!r.uses_conflict_aware()) {
            flag("'order' only applies to sequential conflict-aware methods");
        } else {
            std::set<std::string> order_names(r.order.begin(), r.order.end());
            if (r.order.size() != r.vectors.size() || order_names.size() != r.order.size() ||
                order_names != names)
                flag("'order' must be a permutation of the vector names");
        }
    }
    return bad;
}

}  // namespace tvmerge
