#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "simta/tensor.hpp"

namespace simta {

// The closed primitive set. Shape rules are explicit per op (no general
// broadcasting); see Tape::apply for the exact rule of each kind.
enum class Op : uint8_t {
    kLeaf,
    kConstant,
    kMatmul,
    kAdd,
    kElementwiseMul,
    kConcatLastAxis,
    kRelu,
    kSoftplus,
    kSigmoid,
    kSoftmaxLastAxisMasked,
    kLayerNormLastAxis,
    kEmbeddingLookup,
    kMeanOverAxis,
    kScalarAffine,
    kBceLossMasked,
};

const char* op_name(Op op);

// Op-specific attributes. Only the fields relevant to a given kind are read.
struct OpAttrs {
    double scale = 1.0;           // scalar_affine
    double shift = 0.0;           // scalar_affine
    int axis = 0;                 // mean_over_axis
    bool trans_a = false;         // matmul
    bool trans_b = false;         // matmul
    std::vector<int32_t> indices; // embedding_lookup
    std::vector<uint8_t> mask;    // softmax / bce: 1 = valid entry
};

class Tape;

// Handle to a node on a specific tape.
struct Value {
    int32_t id = -1;
    const Tape* owner = nullptr;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    static constexpr double kLayerNormEps = 1e-5;
    static constexpr double kProbClampLo = 1e-7;
    static constexpr double kProbClampHi = 1.0 - 1e-7;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers an external tensor as a graph leaf. backward() accumulates
    // into t.grad when t.requires_grad. The tensor must outlive the tape.
    Value leaf(Tensor& t);

    Value constant(std::vector<size_t> shape, std::vector<double> data);
    Value constant_scalar(double v);
    Value constant_vec(std::vector<double> v);
    Value constant_matrix(size_t rows, size_t cols, std::vector<double> v);

    // Generic primitive application; all typed helpers below route through it.
    Value apply(Op kind, const std::vector<Value>& inputs, OpAttrs attrs = {});

    Value matmul(Value a, Value b, bool trans_a = false, bool trans_b = false);
    Value add(Value a, Value b);
    Value mul(Value a, Value b);
    Value concat_last(const std::vector<Value>& parts);
    Value relu(Value x);
    Value softplus(Value x);
    Value sigmoid(Value x);
    Value softmax_masked(Value scores, std::vector<uint8_t> valid);
    Value layer_norm(Value x, Value gamma, Value beta);
    Value embedding(Value table, std::vector<int32_t> token_ids);
    Value mean_axis(Value x, int axis);
    Value affine(Value x, double scale, double shift);
    Value bce_masked(Value probs, Value targets, std::vector<uint8_t> valid);

    // Reverse sweep from a scalar loss. seed scales the whole gradient, which
    // is how per-sample losses are weighted inside a batch. Accumulates into
    // the .grad of every bound tensor with requires_grad.
    void backward(Value loss, double seed = 1.0);

    const std::vector<double>& data(Value v) const;
    const std::vector<size_t>& shape(Value v) const;
    double scalar(Value v) const;
    // Gradient buffer of a node after backward(); primarily for tests.
    const std::vector<double>& node_grad(Value v) const;

    size_t size() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Op op;
        std::vector<int32_t> inputs;
        OpAttrs attrs;
        std::vector<size_t> shape;
        std::vector<double> val;
        std::vector<double> grad;
        std::vector<double> aux;  // op-dependent saved state for backward
        Tensor* bound = nullptr;
    };

    Value push(Node n);
    const Node& node(Value v) const;
    void check_owned(Value v, const char* what) const;
    void forward_node(Node& n);
    void backward_node(Node& n);

    std::vector<Node> nodes_;
};

}  // namespace simta
