#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/builders.hpp"
#include "xprompt/model.hpp"
#include "xprompt/tensor.hpp"

using namespace xp;

namespace {

// Central finite difference of the double-precision score with respect to
// one extension-row coordinate. The row is stored in float32, so the
// requested step is quantized; dividing by the realized step keeps the
// quotient honest.
double fd_partial(const ModelWeights& w, Mat<float> ext, int row, int col,
                  const std::vector<int>& prompt, const std::vector<int>& cont, double h) {
    const double x0 = static_cast<double>(ext.at(row, col));
    const float hi = static_cast<float>(x0 + h);
    const float lo = static_cast<float>(x0 - h);
    ext.at(row, col) = hi;
    const double f_hi = score_continuation_f64(w, EmbeddingTable{ext}, prompt, cont);
    ext.at(row, col) = lo;
    const double f_lo = score_continuation_f64(w, EmbeddingTable{ext}, prompt, cont);
    const double step = static_cast<double>(hi) - static_cast<double>(lo);
    REQUIRE(step > 0.0);
    return (f_hi - f_lo) / step;
}

double inf_norm(const Mat<double>& m) {
    double mx = 0.0;
    for (const double v : m.a) {
        mx = std::max(mx, std::abs(v));
    }
    return mx;
}

}  // namespace

TEST_CASE("double-precision input gradient matches central finite differences") {
    const ModelConfig cfg = test::tiny_config(20, 16, 1);
    const ModelWeights w = init_model(cfg, 71);
    const Mat<float> ext = test::random_ext(1, cfg.d_model, 72);
    const EmbeddingTable emb{ext};
    const int ix = 20;  // the single imaginary id

    struct Case {
        std::vector<int> prompt;
        std::vector<int> cont;
        int position;  // where the imaginary word sits in the prompt
    };
    const std::vector<Case> cases = {
        {{0, ix, 5, 9}, {3, 14, 2}, 1},
        {{0, 7, 11, ix}, {16}, 3},
    };

    for (const Case& c : cases) {
        const Mat<double> grad =
            input_embedding_grad_f64(w, emb, c.prompt, c.cont, {c.position});
        REQUIRE(grad.rows == 1);
        const double scale = std::max(inf_norm(grad), 1e-12);
        for (int j = 0; j < cfg.d_model; ++j) {
            const double fd = fd_partial(w, ext, 0, j, c.prompt, c.cont, 1e-4);
            CHECK(std::abs(fd - grad.at(0, j)) / scale < 1e-5);
        }
    }
}

TEST_CASE("a word used twice accumulates both positional gradients") {
    const ModelConfig cfg = test::tiny_config(20, 16, 1);
    const ModelWeights w = init_model(cfg, 73);
    const Mat<float> ext = test::random_ext(1, cfg.d_model, 74);
    const EmbeddingTable emb{ext};
    const std::vector<int> prompt = {0, 20, 6, 20, 12};
    const std::vector<int> cont = {4, 9};

    // perturbing the shared row moves both occurrences at once, so the
    // derivative is the sum of the per-position rows
    const Mat<double> rows = input_embedding_grad_f64(w, emb, prompt, cont, {1, 3});
    Mat<double> sum(1, cfg.d_model);
    for (int j = 0; j < cfg.d_model; ++j) {
        sum.at(0, j) = rows.at(0, j) + rows.at(1, j);
    }
    const double scale = std::max(inf_norm(sum), 1e-12);
    for (int j = 0; j < cfg.d_model; ++j) {
        const double fd = fd_partial(w, ext, 0, j, prompt, cont, 1e-4);
        CHECK(std::abs(fd - sum.at(0, j)) / scale < 1e-5);
    }
}

TEST_CASE("single-precision gradient tracks the double-precision gradient") {
    const ModelConfig cfg = test::tiny_config(30, 32, 2);
    const ModelWeights w = init_model(cfg, 75);
    const Mat<float> ext = test::random_ext(2, cfg.d_model, 76);
    const EmbeddingTable emb{ext};
    const std::vector<int> prompt = {0, 30, 8, 31};
    const std::vector<int> cont = {5, 19, 2};
    const Mat<float> g32 = input_embedding_grad(w, emb, prompt, cont, {1, 3});
    const Mat<double> g64 = input_embedding_grad_f64(w, emb, prompt, cont, {1, 3});
    const double scale = std::max(inf_norm(g64), 1e-12);
    for (size_t i = 0; i < g64.a.size(); ++i) {
        CHECK(std::abs(static_cast<double>(g32.a[i]) - g64.a[i]) / scale < 3e-3);
    }
}
