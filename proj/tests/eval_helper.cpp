// Synthetic evaluator for search tests. Reads a merged checkpoint and scores
// it from its first weights, so the score is a known function of the lambdas
// that produced the file.
//
//   eval_helper quad <center> <ckpt>        {"t": -(w0 - center)^2}
//   eval_helper quad_scaled <c> <s> <ckpt>  {"t": s * -(w0 - c)^2}
//   eval_helper sep <a> <b> <ckpt>          {"t1": -(w0-a)^2, "t2": -(w1-b)^2}
//   eval_helper const <ckpt>                {"t": 1.0}
//   eval_helper prose <ckpt>                prints prose, exit 0
//   eval_helper null_score <ckpt>           {"t": null}
//   eval_helper fail <ckpt>                 exit 3
//
// A leading `count <file>` prefix appends one line per invocation, for
// asserting the total number of evaluator calls.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "tvmerge/safetensors.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.size() >= 2 && args[0] == "count") {
        std::FILE* f = std::fopen(args[1].c_str(), "a");
        if (!f) return 2;
        std::fprintf(f, "call\n");
        std::fclose(f);
        args.erase(args.begin(), args.begin() + 2);
    }
    if (args.empty()) return 2;
    const std::string mode = args[0];
    if (mode == "fail") return 3;
    if (mode == "prose") {
        std::printf("all finished, looks good\n");
        return 0;
    }
    if (mode == "null_score") {
        std::printf("{\"t\": null}\n");
        return 0;
    }

    const std::string ckpt_path = args.back();
    const auto first_weights = [&](std::size_t count) {
        const auto c = tvmerge::Checkpoint::open(ckpt_path);
        const auto v = c.read_f32(c.metas().front().name);
        std::vector<double> w;
        for (std::size_t i = 0; i < count; ++i) w.push_back(v[static_cast<Eigen::Index>(i)]);
        return w;
    };

    if (mode == "const") {
        std::printf("{\"t\": 1.0}\n");
        return 0;
    }
    if (mode == "quad" && args.size() == 3) {
        const double center = std::atof(args[1].c_str());
        const double w0 = first_weights(1)[0];
        std::printf("{\"t\": %.12f}\n", -(w0 - center) * (w0 - center));
        return 0;
    }
    if (mode == "quad_scaled" && args.size() == 4) {
        const double center = std::atof(args[1].c_str());
        const double scale = std::atof(args[2].c_str());
        const double w0 = first_weights(1)[0];
        std::printf("{\"t\": %.12f}\n", scale * -(w0 - center) * (w0 - center));
        return 0;
    }
    if (mode == "sep" && args.size() == 4) {
        const double a = std::atof(args[1].c_str());
        const double b = std::atof(args[2].c_str());
        const auto w = first_weights(2);
        std::printf("{\"t1\": %.12f, \"t2\": %.12f}\n", -(w[0] - a) * (w[0] - a),
                    -(w[1] - b) * (w[1] - b));
        return 0;
    }
    std::fprintf(stderr, "unknown mode\n");
    return 2;
}
