#pragma once

#include "capsnav/tensor.hpp"

namespace capsnav {

// 2-D convolution parameters. weights: [out_ch, in_ch, kh, kw].
struct ConvParams {
    Tensor weights;
    Tensor bias;  // [out_ch]
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weights.shape()[0]; }
    int in_channels() const { return weights.shape()[1]; }
};

ConvParams make_conv(int in_ch, int out_ch, int kh, int kw, int stride, int padding, Rng& rng);

// Cross-correlation (no kernel flip) over x: [in_ch, h, w] plus bias.
// Output extents: floor((h + 2*pad - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);

struct BatchNormParams {
    Tensor gamma;         // [ch]
    Tensor beta;          // [ch]
    Tensor running_mean;  // [ch], not trainable
    Tensor running_var;   // [ch], not trainable
    double eps = 1e-5;
    double momentum = 0.1;
    bool train_mode = true;
};

BatchNormParams make_batch_norm(int channels);

// x: [ch, h, w]. Train mode normalizes by the statistics of this batch
// (legal at batch size 1; eps guards the zero-variance case) and, when
// update_running_stats is set, folds them into the running estimates.
// Eval mode normalizes by the running estimates.
Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool update_running_stats = false);

// x if x > 0 else alpha*(e^x － 1); derivative at exactly 0 is 1.
Tensor elu(const Tensor& x, double alpha = 1.0);

// W: [m, n], x: [n], b: [m] -> W x + b.
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

// Numerically stable (max-subtracted); output is positive and sums to 1.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

// Raw-value softmax helper for detached bookkeeping (no tape involved).
std::vector<double> softmax_values(const std::vector<double>& logits);

struct LstmParams {
    // Gate order [input, forget, cell candidate, output], stacked along
    // the first axis: W [4*hidden, input+hidden], b [4*hidden].
    Tensor W;
    Tensor b;
    int input_size = 0;
    int hidden_size = 0;
};

// Forget-gate bias starts at 1, everything else uniform in +-1/sqrt(fan_in).
LstmParams make_lstm(int input_size, int hidden_size, Rng& rng);

struct LstmState {
    Tensor h;
    Tensor c;
};

LstmState lstm_zero_state(int hidden_size);

// One step of the standard LSTM cell recurrence.
LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& p);

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
Tensor init_uniform(Shape shape, int fan_in, Rng& rng);

}  // namespace capsnav
