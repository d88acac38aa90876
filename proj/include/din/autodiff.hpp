#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "din/mat.hpp"

namespace din {

// A learnable tensor. Values are shared read-only across worker threads
// during forward/backward; `grad` is written only by the serial accumulation
// pass and consumed by the optimizer.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
    Mat adam_m, adam_v;

    Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {}
    void ensure_state() {
        if (grad.empty()) grad = Mat(value.rows, value.cols);
        if (adam_m.empty()) adam_m = Mat(value.rows, value.cols);
        if (adam_v.empty()) adam_v = Mat(value.rows, value.cols);
    }
};

class ParamStore {
public:
    Param& create(const std::string& name, Mat init);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    Param& at(const std::string& name);

    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    size_t total_values() const;

    void zero_grads();

private:
    std::vector<std::unique_ptr<Param>> items_;
    std::unordered_map<std::string, Param*> by_name_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    void step(ParamStore& params);
    int64_t steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
};

namespace ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Mat values. One tape per sample; forward values are
// computed eagerly at op creation, backward() walks the nodes in reverse.
// Param values are referenced, not copied; their gradients stay tape-local
// until add_param_grads() folds them into Param::grad (call it serially, in
// sample order, to keep batch results independent of thread count).
class Tape {
public:
    Var input(Mat v);
    Var use(Param& p);

    Var matmul_nn(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var add_scaled(Var a, Var b, double ka, double kb);
    Var add_row_vec(Var a, Var v);
    Var scale(Var a, double k);
    Var gelu(Var a);
    Var softmax_rows(Var a);
    Var layer_norm(Var x, Var gain, Var bias);
    Var embed_rows(Var table, const std::vector<int>& ids);
    Var concat_cols(Var a, Var b);
    Var concat_rows(Var a, Var b);
    Var slice_cols(Var a, int c0, int c1);

    // Scalar losses (1x1 values).
    Var rfl_loss(Var logits, Mat label, double gamma, double clip_floor, bool reverse_term);
    Var mse_loss(Var pred, Mat target);
    Var kl_loss(Var pred_logits, Mat target);

    const Mat& value(Var v) const;
    const Mat& grad(Var v) const;

    void backward(Var scalar_node);
    void add_param_grads();

    size_t size() const { return nodes_.size(); }

private:
    enum class Op : uint8_t {
        Input,
        ParamRef,
        MatMulNN,
        MatMulNT,
        Transpose,
        Add,
        AddScaled,
        AddRowVec,
        Scale,
        Gelu,
        SoftmaxRows,
        LayerNorm,
        EmbedRows,
        ConcatCols,
        ConcatRows,
        SliceCols,
        RflLoss,
        MseLoss,
        KlLoss,
    };

    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;
        Mat val;
        Mat grad;
        Param* param = nullptr;
        double k0 = 0.0, k1 = 0.0;
        int i0 = 0, i1 = 0;
        bool flag = false;
        Mat aux;   // constants (labels/targets) or saved statistics
        Mat aux2;  // secondary saved buffer (e.g. loss gradient wrt logits)
        std::vector<int> idx;
    };

    int push(Node n);
    Mat& grad_buf(int id);
    const Mat& val_of(int id) const;
    void backprop_node(int id);

    std::vector<Node> nodes_;
    std::unordered_map<const Param*, int> param_nodes_;
};

}  // namespace ad
}  // namespace din
