#include <catch2/catch_amalgamated.hpp>

#include "vts/tape.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace vts;
using Catch::Approx;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

// Central finite differences on every entry of every input against the tape
// gradient. build() must construct the graph from the given leaves and
// return the scalar root id.
void check_gradients(std::vector<Mat> inputs,
                     const std::function<int(Tape&, const std::vector<int>&)>& build,
                     double tol = 1e-7, double h = 1e-6) {
    auto eval = [&](const std::vector<Mat>& xs) {
        Tape t;
        std::vector<int> ids;
        ids.reserve(xs.size());
        for (const auto& x : xs) ids.push_back(t.leaf(x));
        return t.value(build(t, ids))(0, 0);
    };

    Tape t;
    std::vector<int> ids;
    for (const auto& x : inputs) ids.push_back(t.leaf(x));
    const int root = build(t, ids);
    t.backward(root);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Mat& g = t.grad(ids[k]);
        for (int i = 0; i < inputs[k].rows(); ++i)
            for (int j = 0; j < inputs[k].cols(); ++j) {
                auto plus = inputs, minus = inputs;
                plus[k](i, j) += h;
                minus[k](i, j) -= h;
                const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
                const double scale_ref = std::max({std::abs(fd), std::abs(g(i, j)), 1.0});
                INFO("input " << k << " entry (" << i << "," << j << ")");
                REQUIRE(std::abs(g(i, j) - fd) / scale_ref < tol);
            }
    }
}

}  // namespace

TEST_CASE("gradient of a pure matmul chain is exact") {
    // f(A, B, x) = sum(A*B*x); df/dA etc. have closed forms, compare at
    // machine precision rather than by finite differences.
    Rng rng(1);
    Mat A = random_mat(3, 4, rng), B = random_mat(4, 2, rng), x = random_mat(2, 1, rng);
    Tape t;
    int a = t.leaf(A), b = t.leaf(B), xi = t.leaf(x);
    int root = t.sum(t.matmul(a, t.matmul(b, xi)));
    t.backward(root);

    Vec ones = Vec::Ones(3);
    Mat dA = ones * (B * x).transpose();
    Mat dB = A.transpose() * ones * x.transpose();
    Mat dx = B.transpose() * A.transpose() * ones;
    REQUIRE((t.grad(a) - dA).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE((t.grad(b) - dB).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE((t.grad(xi) - dx).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(2);
    auto unary_case = [&](auto op) {
        check_gradients({random_mat(4, 3, rng, 0.8)},
                        [op](Tape& t, const std::vector<int>& ids) {
                            return t.sum((t.*op)(ids[0]));
                        });
    };
    SECTION("tanh") { unary_case(&Tape::tanh_); }
    SECTION("sigmoid") { unary_case(&Tape::sigmoid_); }
    SECTION("exp") { unary_case(&Tape::exp_); }
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    Rng rng(3);
    Mat x = random_mat(5, 4, rng);
    for (int i = 0; i < x.size(); ++i)
        if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.1;  // keep FD valid
    check_gradients({x}, [](Tape& t, const std::vector<int>& ids) {
        return t.sum(t.relu_(ids[0]));
    });
}

TEST_CASE("clamp gradient is identity inside and zero outside") {
    Mat x(1, 4);
    x << -2.0, -0.5, 0.5, 2.0;
    Tape t;
    int a = t.leaf(x);
    int root = t.sum(t.clamp_(a, -1.0, 1.0));
    t.backward(root);
    Mat expect(1, 4);
    expect << 0.0, 1.0, 1.0, 0.0;
    REQUIRE((t.grad(a) - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("binary and structural op gradients match finite differences") {
    Rng rng(4);
    SECTION("add, sub, hadamard composition") {
        check_gradients({random_mat(3, 3, rng), random_mat(3, 3, rng), random_mat(3, 3, rng)},
                        [](Tape& t, const std::vector<int>& ids) {
                            int u = t.add(ids[0], ids[1]);
                            int v = t.sub(ids[1], ids[2]);
                            return t.sum(t.hadamard(u, v));
                        });
    }
    SECTION("add_colvec") {
        check_gradients({random_mat(4, 5, rng), random_mat(4, 1, rng)},
                        [](Tape& t, const std::vector<int>& ids) {
                            return t.sum_squares(t.add_colvec(ids[0], ids[1]));
                        });
    }
    SECTION("scale and add_scalar") {
        check_gradients({random_mat(2, 6, rng)},
                        [](Tape& t, const std::vector<int>& ids) {
                            return t.sum(t.add_scalar(t.scale(ids[0], -1.7), 0.3));
                        });
    }
    SECTION("rows and cols slices") {
        check_gradients({random_mat(6, 5, rng)},
                        [](Tape& t, const std::vector<int>& ids) {
                            int top = t.rows(ids[0], 1, 3);
                            int side = t.cols(top, 2, 2);
                            return t.sum_squares(side);
                        });
    }
    SECTION("concat_cols") {
        check_gradients({random_mat(3, 2, rng), random_mat(3, 4, rng), random_mat(3, 1, rng)},
                        [](Tape& t, const std::vector<int>& ids) {
                            return t.sum_squares(t.concat_cols({ids[0], ids[1], ids[2]}));
                        });
    }
    SECTION("sum_squares") {
        check_gradients({random_mat(4, 4, rng)},
                        [](Tape& t, const std::vector<int>& ids) {
                            return t.sum_squares(ids[0]);
                        });
    }
}

TEST_CASE("a value used by several consumers accumulates all gradients") {
    // f(x) = sum(x ⊙ x) + 3·sum(x): df/dx = 2x + 3
    Rng rng(5);
    Mat x = random_mat(3, 2, rng);
    Tape t;
    int a = t.leaf(x);
    int root = t.add(t.sum(t.hadamard(a, a)), t.scale(t.sum(a), 3.0));
    t.backward(root);
    REQUIRE((t.grad(a).array() - 2.0 * x.array() - 3.0).abs().maxCoeff() < 1e-14);
}

TEST_CASE("im2col matches an explicit convolution and its gradient checks out") {
    Rng rng(6);
    const int C = 2, H = 4, W = 4, kh = 3, kw = 3, pad = 1, B = 3, Cout = 2;
    Mat x = random_mat(C * H * W, B, rng);
    Mat w = random_mat(Cout, C * kh * kw, rng);

    // forward oracle: direct dense convolution
    Mat cols = im2col_mat(x, C, H, W, kh, kw, pad);
    Mat y = w * cols;  // Cout x (H*W*B)
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int yo = 0; yo < H; ++yo)
                for (int xo = 0; xo < W; ++xo) {
                    double acc = 0.0;
                    for (int ci = 0; ci < C; ++ci)
                        for (int dy = 0; dy < kh; ++dy)
                            for (int dx = 0; dx < kw; ++dx) {
                                const int yi = yo - pad + dy, xi = xo - pad + dx;
                                if (yi < 0 || yi >= H || xi < 0 || xi >= W) continue;
                                acc += w(co, ci * kh * kw + dy * kw + dx) *
                                       x(ci * H * W + yi * W + xi, b);
                            }
                    REQUIRE(y(co, b * H * W + yo * W + xo) == Approx(acc).margin(1e-12));
                }

    check_gradients({x, w}, [&](Tape& t, const std::vector<int>& ids) {
        int c = t.im2col(ids[0], C, H, W, kh, kw, pad);
        return t.sum_squares(t.matmul(ids[1], c));
    });
}

TEST_CASE("conv_regroup is a permutation with an exact inverse gradient") {
    Rng rng(7);
    const int C = 3, S = 4, B = 2;
    Mat y = random_mat(C, S * B, rng);
    Mat g = conv_regroup_mat(y, C, S);
    REQUIRE(g.rows() == C * S);
    REQUIRE(g.cols() == B);
    for (int b = 0; b < B; ++b)
        for (int ch = 0; ch < C; ++ch)
            for (int s = 0; s < S; ++s)
                REQUIRE(g(ch * S + s, b) == y(ch, b * S + s));

    check_gradients({y}, [&](Tape& t, const std::vector<int>& ids) {
        return t.sum_squares(t.conv_regroup(ids[0], C, S));
    });
}

TEST_CASE("maxpool2 picks block maxima and routes gradient to the argmax") {
    Mat x(1 * 4 * 4, 1);
    // one channel, 4x4 image with distinct values
    for (int i = 0; i < 16; ++i) x(i, 0) = i * ((i % 3) - 1.0) + 0.01 * i;
    Eigen::MatrixXi argmax;
    Mat out = maxpool2_mat(x, 1, 4, 4, &argmax);
    REQUIRE(out.rows() == 4);
    for (int yo = 0; yo < 2; ++yo)
        for (int xo = 0; xo < 2; ++xo) {
            double best = -1e300;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    best = std::max(best, x((2 * yo + dy) * 4 + (2 * xo + dx), 0));
            REQUIRE(out(yo * 2 + xo, 0) == best);
        }

    check_gradients({x}, [](Tape& t, const std::vector<int>& ids) {
        return t.sum_squares(t.maxpool2(ids[0], 1, 4, 4));
    });
}

TEST_CASE("maxpool2 rejects odd spatial dimensions") {
    Tape t;
    int a = t.leaf(Mat::Zero(3 * 3, 1));
    REQUIRE_THROWS_AS(t.maxpool2(a, 1, 3, 3), ConfigError);
}

TEST_CASE("backward requires a scalar root") {
    Tape t;
    int a = t.leaf(Mat::Zero(2, 2));
    REQUIRE_THROWS_AS(t.backward(a), ConfigError);
}

TEST_CASE("an unrolled recurrence differentiates through shared weights") {
    // h_{t+1} = tanh(W h_t + b), loss = ||h_3||^2; W and b are reused at
    // every step, so their gradients accumulate across time.
    Rng rng(8);
    check_gradients({random_mat(3, 3, rng, 0.5), random_mat(3, 1, rng, 0.5),
                     random_mat(3, 1, rng)},
                    [](Tape& t, const std::vector<int>& ids) {
                        int h = ids[2];
                        for (int step = 0; step < 3; ++step)
                            h = t.tanh_(t.add(t.matmul(ids[0], h), ids[1]));
                        return t.sum_squares(h);
                    });
}

TEST_CASE("non-finite node values are rejected") {
    Tape t;
    Mat bad(1, 2);
    bad << 1.0, std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(t.leaf(bad), NumericError);
}
