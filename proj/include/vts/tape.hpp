#pragma once

// Reverse-mode autodiff over Eigen matrices. Nodes are created in evaluation
// order on a tape; backward() walks the tape in reverse, so any graph built
// through the op methods gets exact gradients, including the unrolled
// recurrences and the convolutional gather/scatter ops. Values are float64
// throughout so finite-difference comparisons are meaningful.

#include <cmath>
#include <functional>
#include <deque>
#include <vector>

#include <Eigen/Dense>

#include "vts/common.hpp"

namespace vts {

// ---- conv index helpers, shared with the non-tape forward path ----------

// Feature maps live in matrices of shape (C*H*W) x B, one sample per column,
// row index ch*H*W + y*W + x.

inline Mat im2col_mat(const Mat& x, int C, int H, int W, int kh, int kw, int pad) {
    const int B = static_cast<int>(x.cols());
    const int Ho = H + 2 * pad - kh + 1;
    const int Wo = W + 2 * pad - kw + 1;
    if (Ho <= 0 || Wo <= 0) throw ConfigError("im2col: kernel larger than padded input");
    if (x.rows() != static_cast<Eigen::Index>(C) * H * W)
        throw ConfigError("im2col: input rows do not match C*H*W");
    Mat out = Mat::Zero(static_cast<Eigen::Index>(C) * kh * kw,
                        static_cast<Eigen::Index>(Ho) * Wo * B);
    for (int b = 0; b < B; ++b)
        for (int yo = 0; yo < Ho; ++yo)
            for (int xo = 0; xo < Wo; ++xo) {
                const Eigen::Index col = static_cast<Eigen::Index>(b) * Ho * Wo + yo * Wo + xo;
                for (int ch = 0; ch < C; ++ch)
                    for (int dy = 0; dy < kh; ++dy) {
                        const int yi = yo - pad + dy;
                        if (yi < 0 || yi >= H) continue;
                        for (int dx = 0; dx < kw; ++dx) {
                            const int xi = xo - pad + dx;
                            if (xi < 0 || xi >= W) continue;
                            out(static_cast<Eigen::Index>(ch) * kh * kw + dy * kw + dx, col) =
                                x(static_cast<Eigen::Index>(ch) * H * W + yi * W + xi, b);
                        }
                    }
            }
    return out;
}

// C x (S*B) -> (C*S) x B, undoing the column blocking of a conv output.
inline Mat conv_regroup_mat(const Mat& y, int C, int S) {
    if (y.rows() != C || y.cols() % S != 0)
        throw ConfigError("conv_regroup: shape mismatch");
    const int B = static_cast<int>(y.cols()) / S;
    Mat out(static_cast<Eigen::Index>(C) * S, B);
    for (int b = 0; b < B; ++b)
        for (int ch = 0; ch < C; ++ch)
            for (int s = 0; s < S; ++s)
                out(static_cast<Eigen::Index>(ch) * S + s, b) =
                    y(ch, static_cast<Eigen::Index>(b) * S + s);
    return out;
}

// 2x2 max pooling, stride 2. argmax (if given) records the winning input row
// per output entry so the gradient can be routed back.
inline Mat maxpool2_mat(const Mat& x, int C, int H, int W, Eigen::MatrixXi* argmax = nullptr) {
    if (H % 2 != 0 || W % 2 != 0) throw ConfigError("maxpool2: H and W must be even");
    if (x.rows() != static_cast<Eigen::Index>(C) * H * W)
        throw ConfigError("maxpool2: input rows do not match C*H*W");
    const int B = static_cast<int>(x.cols());
    const int Ho = H / 2, Wo = W / 2;
    Mat out(static_cast<Eigen::Index>(C) * Ho * Wo, B);
    if (argmax) argmax->resize(out.rows(), out.cols());
    for (int b = 0; b < B; ++b)
        for (int ch = 0; ch < C; ++ch)
            for (int yo = 0; yo < Ho; ++yo)
                for (int xo = 0; xo < Wo; ++xo) {
                    const Eigen::Index ro = static_cast<Eigen::Index>(ch) * Ho * Wo + yo * Wo + xo;
                    double best = -std::numeric_limits<double>::infinity();
                    Eigen::Index best_row = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const Eigen::Index ri = static_cast<Eigen::Index>(ch) * H * W +
                                                    (2 * yo + dy) * W + (2 * xo + dx);
                            if (x(ri, b) > best) {
                                best = x(ri, b);
                                best_row = ri;
                            }
                        }
                    out(ro, b) = best;
                    if (argmax) (*argmax)(ro, b) = static_cast<int>(best_row);
                }
    return out;
}

// ---- the tape ------------------------------------------------------------

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int leaf(const Mat& v) { return push(v, nullptr); }

    const Mat& value(int id) const { return nodes_[id].value; }
    const Mat& grad(int id) const { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

    int add(int a, int b) {
        int out = push(nodes_[a].value + nodes_[b].value, [this, a, b, out_id = next_id()] {
            accum(a, nodes_[out_id].grad);
            accum(b, nodes_[out_id].grad);
        });
        return out;
    }

    int sub(int a, int b) {
        int out = push(nodes_[a].value - nodes_[b].value, [this, a, b, out_id = next_id()] {
            accum(a, nodes_[out_id].grad);
            accum(b, -nodes_[out_id].grad);
        });
        return out;
    }

    int hadamard(int a, int b) {
        int out = push(nodes_[a].value.cwiseProduct(nodes_[b].value),
                       [this, a, b, out_id = next_id()] {
                           accum(a, nodes_[out_id].grad.cwiseProduct(nodes_[b].value));
                           accum(b, nodes_[out_id].grad.cwiseProduct(nodes_[a].value));
                       });
        return out;
    }

    int matmul(int a, int b) {
        int out = push(nodes_[a].value * nodes_[b].value, [this, a, b, out_id = next_id()] {
            accum(a, nodes_[out_id].grad * nodes_[b].value.transpose());
            accum(b, nodes_[a].value.transpose() * nodes_[out_id].grad);
        });
        return out;
    }

    // a: m x n, v: m x 1 broadcast across columns
    int add_colvec(int a, int v) {
        int out = push(nodes_[a].value.colwise() + Vec(nodes_[v].value.col(0)),
                       [this, a, v, out_id = next_id()] {
                           accum(a, nodes_[out_id].grad);
                           accum(v, nodes_[out_id].grad.rowwise().sum());
                       });
        return out;
    }

    int scale(int a, double s) {
        int out = push(nodes_[a].value * s, [this, a, s, out_id = next_id()] {
            accum(a, nodes_[out_id].grad * s);
        });
        return out;
    }

    int add_scalar(int a, double c) {
        int out = push((nodes_[a].value.array() + c).matrix(), [this, a, out_id = next_id()] {
            accum(a, nodes_[out_id].grad);
        });
        return out;
    }

    int tanh_(int a) {
        int out = push(nodes_[a].value.array().tanh().matrix(), [this, a, out_id = next_id()] {
            const auto& t = nodes_[out_id].value.array();
            accum(a, (nodes_[out_id].grad.array() * (1.0 - t * t)).matrix());
        });
        return out;
    }

    int sigmoid_(int a) {
        int out = push((1.0 / (1.0 + (-nodes_[a].value.array()).exp())).matrix(),
                       [this, a, out_id = next_id()] {
                           const auto& s = nodes_[out_id].value.array();
                           accum(a, (nodes_[out_id].grad.array() * s * (1.0 - s)).matrix());
                       });
        return out;
    }

    int relu_(int a) {
        int out = push(nodes_[a].value.cwiseMax(0.0), [this, a, out_id = next_id()] {
            accum(a, (nodes_[out_id].grad.array() *
                      (nodes_[a].value.array() > 0.0).cast<double>())
                         .matrix());
        });
        return out;
    }

    int exp_(int a) {
        int out = push(nodes_[a].value.array().exp().matrix(), [this, a, out_id = next_id()] {
            accum(a, nodes_[out_id].grad.cwiseProduct(nodes_[out_id].value));
        });
        return out;
    }

    int clamp_(int a, double lo, double hi) {
        int out = push(nodes_[a].value.cwiseMax(lo).cwiseMin(hi),
                       [this, a, lo, hi, out_id = next_id()] {
                           const auto inside = (nodes_[a].value.array() > lo &&
                                                nodes_[a].value.array() < hi)
                                                   .cast<double>();
                           accum(a, (nodes_[out_id].grad.array() * inside).matrix());
                       });
        return out;
    }

    int rows(int a, int r0, int n) {
        int out = push(nodes_[a].value.middleRows(r0, n), [this, a, r0, n, out_id = next_id()] {
            Mat g = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
            g.middleRows(r0, n) = nodes_[out_id].grad;
            accum(a, g);
        });
        return out;
    }

    int cols(int a, int c0, int n) {
        int out = push(nodes_[a].value.middleCols(c0, n), [this, a, c0, n, out_id = next_id()] {
            Mat g = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
            g.middleCols(c0, n) = nodes_[out_id].grad;
            accum(a, g);
        });
        return out;
    }

    int concat_cols(const std::vector<int>& ids) {
        if (ids.empty()) throw ConfigError("concat_cols: empty list");
        Eigen::Index rows_n = nodes_[ids[0]].value.rows(), total = 0;
        for (int id : ids) {
            if (nodes_[id].value.rows() != rows_n)
                throw ConfigError("concat_cols: row mismatch");
            total += nodes_[id].value.cols();
        }
        Mat v(rows_n, total);
        Eigen::Index at = 0;
        for (int id : ids) {
            v.middleCols(at, nodes_[id].value.cols()) = nodes_[id].value;
            at += nodes_[id].value.cols();
        }
        int out = push(std::move(v), [this, ids, out_id = next_id()] {
            Eigen::Index at2 = 0;
            for (int id : ids) {
                const Eigen::Index nc = nodes_[id].value.cols();
                accum(id, nodes_[out_id].grad.middleCols(at2, nc));
                at2 += nc;
            }
        });
        return out;
    }

    int sum(int a) {
        Mat v(1, 1);
        v(0, 0) = nodes_[a].value.sum();
        int out = push(std::move(v), [this, a, out_id = next_id()] {
            accum(a, Mat::Constant(nodes_[a].value.rows(), nodes_[a].value.cols(),
                                   nodes_[out_id].grad(0, 0)));
        });
        return out;
    }

    int sum_squares(int a) {
        Mat v(1, 1);
        v(0, 0) = nodes_[a].value.squaredNorm();
        int out = push(std::move(v), [this, a, out_id = next_id()] {
            accum(a, 2.0 * nodes_[out_id].grad(0, 0) * nodes_[a].value);
        });
        return out;
    }

    int im2col(int a, int C, int H, int W, int kh, int kw, int pad) {
        int out = push(im2col_mat(nodes_[a].value, C, H, W, kh, kw, pad),
                       [this, a, C, H, W, kh, kw, pad, out_id = next_id()] {
                           const Mat& g = nodes_[out_id].grad;
                           Mat gi = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
                           const int B = static_cast<int>(gi.cols());
                           const int Ho = H + 2 * pad - kh + 1;
                           const int Wo = W + 2 * pad - kw + 1;
                           for (int b = 0; b < B; ++b)
                               for (int yo = 0; yo < Ho; ++yo)
                                   for (int xo = 0; xo < Wo; ++xo) {
                                       const Eigen::Index col =
                                           static_cast<Eigen::Index>(b) * Ho * Wo + yo * Wo + xo;
                                       for (int ch = 0; ch < C; ++ch)
                                           for (int dy = 0; dy < kh; ++dy) {
                                               const int yi = yo - pad + dy;
                                               if (yi < 0 || yi >= H) continue;
                                               for (int dx = 0; dx < kw; ++dx) {
                                                   const int xi = xo - pad + dx;
                                                   if (xi < 0 || xi >= W) continue;
                                                   gi(static_cast<Eigen::Index>(ch) * H * W +
                                                          yi * W + xi,
                                                      b) +=
                                                       g(static_cast<Eigen::Index>(ch) * kh * kw +
                                                             dy * kw + dx,
                                                         col);
                                               }
                                           }
                                   }
                           accum(a, gi);
                       });
        return out;
    }

    int conv_regroup(int a, int C, int S) {
        int out = push(conv_regroup_mat(nodes_[a].value, C, S),
                       [this, a, C, S, out_id = next_id()] {
                           const Mat& g = nodes_[out_id].grad;
                           Mat gi(C, nodes_[a].value.cols());
                           const int B = static_cast<int>(g.cols());
                           for (int b = 0; b < B; ++b)
                               for (int ch = 0; ch < C; ++ch)
                                   for (int s = 0; s < S; ++s)
                                       gi(ch, static_cast<Eigen::Index>(b) * S + s) =
                                           g(static_cast<Eigen::Index>(ch) * S + s, b);
                           accum(a, gi);
                       });
        return out;
    }

    int maxpool2(int a, int C, int H, int W) {
        auto argmax = std::make_shared<Eigen::MatrixXi>();
        int out = push(maxpool2_mat(nodes_[a].value, C, H, W, argmax.get()),
                       [this, a, argmax, out_id = next_id()] {
                           const Mat& g = nodes_[out_id].grad;
                           Mat gi = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
                           for (Eigen::Index c = 0; c < g.cols(); ++c)
                               for (Eigen::Index r = 0; r < g.rows(); ++r)
                                   gi((*argmax)(r, c), c) += g(r, c);
                           accum(a, gi);
                       });
        return out;
    }

    // Seeds d(root)/d(root) = 1 and accumulates gradients into every node
    // reachable backward from root. root must be 1x1 (a scalar objective).
    void backward(int root) {
        if (nodes_[root].value.size() != 1)
            throw ConfigError("backward: root must be a 1x1 scalar");
        reached_.assign(nodes_.size(), false);
        for (auto& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        nodes_[root].grad(0, 0) = 1.0;
        reached_[root] = true;
        for (int i = root; i >= 0; --i)
            if (reached_[i] && nodes_[i].backward) nodes_[i].backward();
    }

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void()> backward;
    };

    int next_id() const { return static_cast<int>(nodes_.size()); }

    int push(Mat v, std::function<void()> bw) {
        require_finite(v, "tape node value");
        nodes_.push_back(Node{std::move(v), Mat(), std::move(bw)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void accum(int id, const Mat& delta) {
        nodes_[id].grad += delta;
        reached_[id] = true;
    }

    std::deque<Node> nodes_;
    std::vector<bool> reached_;
};

}  // namespace vts
