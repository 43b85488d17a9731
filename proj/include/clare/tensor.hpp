#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "clare/rng.hpp"

namespace clare {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf or other numerical breakdown; maps to exit code 3 in the CLI.
struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense 64-bit tensor with an optional gradient buffer. Values are doubles
// during all training math; checkpoints store 32-bit (see blob.hpp).
struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string name;

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), 0.0);
    }
};

using Tensor = std::shared_ptr<TensorData>;

Tensor tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
Tensor tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
Tensor gaussian_tensor(Shape shape, Rng& rng, double stddev, bool requires_grad = false,
                       std::string name = "");

bool all_finite(const TensorData& t);
void check_finite(const Tensor& t, const char* context);

// Records one backward closure per forward op. Topological order is the
// recording order; backward replays it in reverse exactly once, after which
// the tape is consumed and must be reset before reuse.
class Tape {
public:
    bool recording = true;

    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    void backward(const Tensor& loss);

    std::size_t size() const { return records_.size(); }
    bool consumed() const { return consumed_; }

    void reset() {
        records_.clear();
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
};

// ---- recorded forward ops -------------------------------------------------
// Each op validates shapes (ShapeError names the op and offending shapes),
// computes the result, and appends a backward record when recording is on and
// any input requires grad. 1-D operands are treated as a single row / column
// where a matrix is expected.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// x [B,k] * W [n,k]^T + bias [n] -> [B,n]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& W, const Tensor& bias);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor relu(Tape& tape, const Tensor& a);
// Row-wise normalization over the last dimension, then affine (gain, bias).
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Column-wise concatenation of equal-row tensors (1-D inputs concatenate to 1-D).
Tensor concat(Tape& tape, const std::vector<Tensor>& parts);
Tensor mean_all(Tape& tape, const Tensor& a);   // scalar, shape {1}
Tensor sum_all(Tape& tape, const Tensor& a);    // scalar, shape {1}
Tensor l2_norm(Tape& tape, const Tensor& a);    // scalar, shape {1}
Tensor rows_l2_norm(Tape& tape, const Tensor& a);  // [B,d] -> [B]

}  // namespace clare
