#pragma once

// Weight containers and forward primitives. Every building block exists in
// two mirrored forms: a plain Eigen forward for inference and a tape builder
// for training, kept structurally identical so their outputs agree to
// floating-point exactness.

#include <array>

#include "vts/common.hpp"
#include "vts/tape.hpp"

namespace vts::nn {

// Containers are templated on the tensor handle so the same structure holds
// Eigen matrices (weights, gradients, optimizer state) or tape node ids.
template <class T>
struct Mlp3 {  // three fully connected layers, ReLU on the hidden two
    std::array<T, 3> w, b;
};

template <class T>
struct Mlp2 {  // single hidden layer with tanh, linear output head
    std::array<T, 2> w, b;
};

template <class T>
struct Lstm {  // packed gate order (input, forget, output, candidate)
    T wx, wh, b;  // wx: 4H x in, wh: 4H x H, b: 4H x 1
};

template <class T>
struct Conv {  // 3x3 kernels flattened row-major per input channel
    T w, b;  // w: out_ch x (in_ch*9), b: out_ch x 1
};

template <class T>
struct FrameEnc {  // three conv+pool blocks then one FC layer
    std::array<Conv<T>, 3> conv;
    T fc_w, fc_b;
};

struct ConvShape {
    int in_ch = 0, h = 0, w = 0;
    std::array<int, 3> channels{};
};

inline Mat add_bias(const Mat& x, const Mat& b) { return x.colwise() + Vec(b.col(0)); }
inline Mat relu(const Mat& x) { return x.cwiseMax(0.0); }
inline Mat sigmoid(const Mat& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

// ---- MLPs ----------------------------------------------------------------

inline Mat mlp3_forward(const Mlp3<Mat>& m, const Mat& x) {
    Mat h0 = relu(add_bias(m.w[0] * x, m.b[0]));
    Mat h1 = relu(add_bias(m.w[1] * h0, m.b[1]));
    return add_bias(m.w[2] * h1, m.b[2]);
}

inline int mlp3_tape(Tape& t, const Mlp3<int>& m, int x) {
    int h0 = t.relu_(t.add_colvec(t.matmul(m.w[0], x), m.b[0]));
    int h1 = t.relu_(t.add_colvec(t.matmul(m.w[1], h0), m.b[1]));
    return t.add_colvec(t.matmul(m.w[2], h1), m.b[2]);
}

inline Mat mlp2_forward(const Mlp2<Mat>& m, const Mat& x) {
    Mat h = add_bias(m.w[0] * x, m.b[0]).array().tanh().matrix();
    return add_bias(m.w[1] * h, m.b[1]);
}

inline int mlp2_tape(Tape& t, const Mlp2<int>& m, int x) {
    int h = t.tanh_(t.add_colvec(t.matmul(m.w[0], x), m.b[0]));
    return t.add_colvec(t.matmul(m.w[1], h), m.b[1]);
}

// ---- LSTM ----------------------------------------------------------------

struct LstmBatchState {  // hidden x B, one column per sequence in the batch
    Mat h, c;
};

inline LstmBatchState lstm_zero_state(int hidden, int batch) {
    return {Mat::Zero(hidden, batch), Mat::Zero(hidden, batch)};
}

inline LstmBatchState lstm_step(const Lstm<Mat>& w, const LstmBatchState& s, const Mat& x) {
    const Eigen::Index H = s.h.rows();
    Mat pre = add_bias(w.wx * x + w.wh * s.h, w.b);
    Mat i = sigmoid(pre.topRows(H));
    Mat f = sigmoid(pre.middleRows(H, H));
    Mat o = sigmoid(pre.middleRows(2 * H, H));
    Mat g = pre.bottomRows(H).array().tanh().matrix();
    LstmBatchState out;
    out.c = f.cwiseProduct(s.c) + i.cwiseProduct(g);
    out.h = o.cwiseProduct(out.c.array().tanh().matrix());
    return out;
}

struct LstmStateIds {
    int h = -1, c = -1;
};

inline LstmStateIds lstm_step_tape(Tape& t, const Lstm<int>& w, const LstmStateIds& s, int x,
                                   int H) {
    int pre = t.add_colvec(t.add(t.matmul(w.wx, x), t.matmul(w.wh, s.h)), w.b);
    int i = t.sigmoid_(t.rows(pre, 0, H));
    int f = t.sigmoid_(t.rows(pre, H, H));
    int o = t.sigmoid_(t.rows(pre, 2 * H, H));
    int g = t.tanh_(t.rows(pre, 3 * H, H));
    int c = t.add(t.hadamard(f, s.c), t.hadamard(i, g));
    int h = t.hadamard(o, t.tanh_(c));
    return {h, c};
}

// ---- conv frame encoder ----------------------------------------------------

// clips: (in_ch*h*w) x B, one stacked clip per column; returns embed x B.
inline Mat frame_encoder_forward(const FrameEnc<Mat>& fe, const Mat& clips,
                                 const ConvShape& cs) {
    Mat x = clips;
    int C = cs.in_ch, H = cs.h, W = cs.w;
    for (int l = 0; l < 3; ++l) {
        const int Co = cs.channels[l];
        Mat cols = im2col_mat(x, C, H, W, 3, 3, 1);
        Mat y = relu(add_bias(fe.conv[l].w * cols, fe.conv[l].b));
        Mat fm = conv_regroup_mat(y, Co, H * W);
        x = maxpool2_mat(fm, Co, H, W);
        C = Co;
        H /= 2;
        W /= 2;
    }
    return add_bias(fe.fc_w * x, fe.fc_b);
}

inline int frame_encoder_tape(Tape& t, const FrameEnc<int>& fe, int clips,
                              const ConvShape& cs) {
    int x = clips;
    int C = cs.in_ch, H = cs.h, W = cs.w;
    for (int l = 0; l < 3; ++l) {
        const int Co = cs.channels[l];
        int cols = t.im2col(x, C, H, W, 3, 3, 1);
        int y = t.relu_(t.add_colvec(t.matmul(fe.conv[l].w, cols), fe.conv[l].b));
        int fm = t.conv_regroup(y, Co, H * W);
        x = t.maxpool2(fm, Co, H, W);
        C = Co;
        H /= 2;
        W /= 2;
    }
    return t.add_colvec(t.matmul(fe.fc_w, x), fe.fc_b);
}

}  // namespace vts::nn
