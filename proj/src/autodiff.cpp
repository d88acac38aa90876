#include "din/autodiff.hpp"

#include <cmath>

#include "din/kernels.hpp"
#include "din/nlr.hpp"

namespace din {

Param& ParamStore::create(const std::string& name, Mat init) {
    require(by_name_.find(name) == by_name_.end(), "ParamStore: duplicate parameter " + name);
    items_.push_back(std::make_unique<Param>(name, std::move(init)));
    Param* p = items_.back().get();
    by_name_[name] = p;
    return *p;
}

Param* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Param* ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Param& ParamStore::at(const std::string& name) {
    Param* p = find(name);
    require(p != nullptr, "ParamStore: unknown parameter " + name);
    return *p;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> v;
    v.reserve(items_.size());
    for (auto& p : items_) v.push_back(p.get());
    return v;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> v;
    v.reserve(items_.size());
    for (auto& p : items_) v.push_back(p.get());
    return v;
}

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (auto& p : items_) n += p->value.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& p : items_) {
        p->ensure_state();
        p->grad.fill(0.0);
    }
}

void Adam::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param* p : params.all()) {
        p->ensure_state();
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad.a[i];
            double& m = p->adam_m.a[i];
            double& v = p->adam_v.a[i];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
            const double mh = m / bc1;
            const double vh = v / bc2;
            p->value.a[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

namespace ad {

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Mat& Tape::val_of(int id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.val;
}

Mat& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        const Mat& v = val_of(id);
        n.grad = Mat(v.rows, v.cols);
    }
    return n.grad;
}

const Mat& Tape::value(Var v) const { return val_of(v.id); }

const Mat& Tape::grad(Var v) const {
    static const Mat kEmpty;
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? kEmpty : n.grad;
}

Var Tape::input(Mat v) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(v);
    return {push(std::move(n))};
}

Var Tape::use(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {it->second};
    Node n;
    n.op = Op::ParamRef;
    n.param = &p;
    int id = push(std::move(n));
    param_nodes_[&p] = id;
    return {id};
}

Var Tape::matmul_nn(Var a, Var b) {
    Node n;
    n.op = Op::MatMulNN;
    n.a = a.id;
    n.b = b.id;
    n.val = kernels::matmul_nn(val_of(a.id), val_of(b.id));
    return {push(std::move(n))};
}

Var Tape::matmul_nt(Var a, Var b) {
    Node n;
    n.op = Op::MatMulNT;
    n.a = a.id;
    n.b = b.id;
    n.val = kernels::matmul_nt(val_of(a.id), val_of(b.id));
    return {push(std::move(n))};
}

Var Tape::transpose(Var a) {
    const Mat& x = val_of(a.id);
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.val = Mat(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) n.val(j, i) = x(i, j);
    return {push(std::move(n))};
}

Var Tape::add(Var a, Var b) { return add_scaled(a, b, 1.0, 1.0); }

Var Tape::add_scaled(Var a, Var b, double ka, double kb) {
    const Mat& x = val_of(a.id);
    const Mat& y = val_of(b.id);
    require(x.same_shape(y), "add_scaled: shape mismatch");
    Node n;
    n.op = Op::AddScaled;
    n.a = a.id;
    n.b = b.id;
    n.k0 = ka;
    n.k1 = kb;
    n.val = Mat(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) n.val.a[i] = ka * x.a[i] + kb * y.a[i];
    return {push(std::move(n))};
}

Var Tape::add_row_vec(Var a, Var v) {
    const Mat& x = val_of(a.id);
    const Mat& r = val_of(v.id);
    require(r.rows == 1 && r.cols == x.cols, "add_row_vec: vector shape mismatch");
    Node n;
    n.op = Op::AddRowVec;
    n.a = a.id;
    n.b = v.id;
    n.val = x;
    for (int i = 0; i < x.rows; ++i) {
        double* row = n.val.row(i);
        for (int j = 0; j < x.cols; ++j) row[j] += r.a[j];
    }
    return {push(std::move(n))};
}

Var Tape::scale(Var a, double k) {
    const Mat& x = val_of(a.id);
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.k0 = k;
    n.val = x;
    for (double& v : n.val.a) v *= k;
    return {push(std::move(n))};
}

Var Tape::gelu(Var a) {
    Node n;
    n.op = Op::Gelu;
    n.a = a.id;
    n.val = val_of(a.id);
    kernels::serial::gelu_inplace(n.val);
    return {push(std::move(n))};
}

Var Tape::softmax_rows(Var a) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a.id;
    n.val = val_of(a.id);
    kernels::serial::softmax_rows_inplace(n.val);
    return {push(std::move(n))};
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
    const Mat& v = val_of(x.id);
    const Mat& g = val_of(gain.id);
    const Mat& b = val_of(bias.id);
    require(g.rows == 1 && g.cols == v.cols && b.rows == 1 && b.cols == v.cols,
            "layer_norm: gain/bias shape mismatch");
    constexpr double kEps = 1e-5;
    Node n;
    n.op = Op::LayerNorm;
    n.a = x.id;
    n.b = gain.id;
    n.c = bias.id;
    n.val = Mat(v.rows, v.cols);
    n.aux = Mat(v.rows, 2);  // per-row mean, inv-std
    for (int i = 0; i < v.rows; ++i) {
        const double* xi = v.row(i);
        double mean = 0.0;
        for (int j = 0; j < v.cols; ++j) mean += xi[j];
        mean /= v.cols;
        double var = 0.0;
        for (int j = 0; j < v.cols; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var /= v.cols;
        const double inv = 1.0 / std::sqrt(var + kEps);
        n.aux(i, 0) = mean;
        n.aux(i, 1) = inv;
        double* yi = n.val.row(i);
        for (int j = 0; j < v.cols; ++j) yi[j] = (xi[j] - mean) * inv * g.a[j] + b.a[j];
    }
    return {push(std::move(n))};
}

Var Tape::embed_rows(Var table, const std::vector<int>& ids) {
    const Mat& t = val_of(table.id);
    Node n;
    n.op = Op::EmbedRows;
    n.a = table.id;
    n.idx = ids;
    n.val = Mat(static_cast<int>(ids.size()), t.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < t.rows, "embed_rows: index out of range");
        const double* src = t.row(ids[i]);
        std::copy(src, src + t.cols, n.val.row(static_cast<int>(i)));
    }
    return {push(std::move(n))};
}

Var Tape::concat_cols(Var a, Var b) {
    const Mat& x = val_of(a.id);
    const Mat& y = val_of(b.id);
    require(x.rows == y.rows, "concat_cols: row count mismatch");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.i0 = x.cols;
    n.val = Mat(x.rows, x.cols + y.cols);
    for (int i = 0; i < x.rows; ++i) {
        std::copy(x.row(i), x.row(i) + x.cols, n.val.row(i));
        std::copy(y.row(i), y.row(i) + y.cols, n.val.row(i) + x.cols);
    }
    return {push(std::move(n))};
}

Var Tape::concat_rows(Var a, Var b) {
    const Mat& x = val_of(a.id);
    const Mat& y = val_of(b.id);
    require(x.cols == y.cols, "concat_rows: column count mismatch");
    Node n;
    n.op = Op::ConcatRows;
    n.a = a.id;
    n.b = b.id;
    n.i0 = x.rows;
    n.val = Mat(x.rows + y.rows, x.cols);
    std::copy(x.a.begin(), x.a.end(), n.val.a.begin());
    std::copy(y.a.begin(), y.a.end(), n.val.a.begin() + x.size());
    return {push(std::move(n))};
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Mat& x = val_of(a.id);
    require(0 <= c0 && c0 < c1 && c1 <= x.cols, "slice_cols: bad range");
    Node n;
    n.op = Op::SliceCols;
    n.a = a.id;
    n.i0 = c0;
    n.i1 = c1;
    n.val = Mat(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
        std::copy(x.row(i) + c0, x.row(i) + c1, n.val.row(i));
    return {push(std::move(n))};
}

Var Tape::rfl_loss(Var logits, Mat label, double gamma, double clip_floor, bool reverse_term) {
    const Mat& z = val_of(logits.id);
    require(z.rows == 1 && label.rows == 1 && label.cols == z.cols,
            "rfl_loss: expects 1xL logits and matching label");
    std::vector<double> p(z.a);
    kernels::softmax_row(p.data(), z.cols);
    auto res = nlr::rfl_loss(p, label.a, gamma, clip_floor, reverse_term);
    Node n;
    n.op = Op::RflLoss;
    n.a = logits.id;
    n.val = Mat(1, 1, {res.loss});
    n.aux = std::move(label);
    n.aux2 = Mat::row_vec(std::move(res.grad_logits));
    return {push(std::move(n))};
}

Var Tape::mse_loss(Var pred, Mat target) {
    const Mat& p = val_of(pred.id);
    require(p.same_shape(target), "mse_loss: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double d = p.a[i] - target.a[i];
        acc += d * d;
    }
    Node n;
    n.op = Op::MseLoss;
    n.a = pred.id;
    n.val = Mat(1, 1, {acc / static_cast<double>(p.size())});
    n.aux = std::move(target);
    return {push(std::move(n))};
}

Var Tape::kl_loss(Var pred_logits, Mat target) {
    const Mat& z = val_of(pred_logits.id);
    require(z.same_shape(target) && z.rows == 1, "kl_loss: expects 1xL logits and target");
    std::vector<double> s(z.a);
    kernels::softmax_row(s.data(), z.cols);
    double acc = 0.0;
    for (int j = 0; j < z.cols; ++j) {
        const double t = target.a[j];
        if (t > 0.0) acc += t * (std::log(t) - std::log(s[j]));
    }
    Node n;
    n.op = Op::KlLoss;
    n.a = pred_logits.id;
    n.val = Mat(1, 1, {acc});
    n.aux = std::move(target);
    n.aux2 = Mat::row_vec(std::move(s));
    return {push(std::move(n))};
}

void Tape::backward(Var scalar_node) {
    const Mat& v = val_of(scalar_node.id);
    require(v.rows == 1 && v.cols == 1, "backward: root must be scalar");
    grad_buf(scalar_node.id).a[0] = 1.0;
    for (int id = scalar_node.id; id >= 0; --id) {
        if (nodes_[id].grad.empty()) continue;
        backprop_node(id);
    }
}

void Tape::backprop_node(int id) {
    Node& n = nodes_[id];
    const Mat& dy = n.grad;
    switch (n.op) {
        case Op::Input:
        case Op::ParamRef:
            break;
        case Op::MatMulNN: {
            kernels::add_inplace(grad_buf(n.a), kernels::matmul_nt(dy, val_of(n.b)));
            kernels::add_inplace(grad_buf(n.b), kernels::matmul_tn(val_of(n.a), dy));
            break;
        }
        case Op::MatMulNT: {
            kernels::add_inplace(grad_buf(n.a), kernels::matmul_nn(dy, val_of(n.b)));
            kernels::add_inplace(grad_buf(n.b), kernels::matmul_tn(dy, val_of(n.a)));
            break;
        }
        case Op::Transpose: {
            Mat& da = grad_buf(n.a);
            for (int i = 0; i < dy.rows; ++i)
                for (int j = 0; j < dy.cols; ++j) da(j, i) += dy(i, j);
            break;
        }
        case Op::AddScaled: {
            kernels::axpy_inplace(grad_buf(n.a), n.k0, dy);
            kernels::axpy_inplace(grad_buf(n.b), n.k1, dy);
            break;
        }
        case Op::AddRowVec: {
            kernels::add_inplace(grad_buf(n.a), dy);
            Mat& dv = grad_buf(n.b);
            for (int i = 0; i < dy.rows; ++i) {
                const double* r = dy.row(i);
                for (int j = 0; j < dy.cols; ++j) dv.a[j] += r[j];
            }
            break;
        }
        case Op::Scale: {
            kernels::axpy_inplace(grad_buf(n.a), n.k0, dy);
            break;
        }
        case Op::Gelu: {
            const Mat& x = val_of(n.a);
            Mat& da = grad_buf(n.a);
            for (size_t i = 0; i < x.size(); ++i)
                da.a[i] += dy.a[i] * kernels::gelu_grad_scalar(x.a[i]);
            break;
        }
        case Op::SoftmaxRows: {
            const Mat& y = n.val;
            Mat& da = grad_buf(n.a);
            for (int i = 0; i < y.rows; ++i) {
                const double* yi = y.row(i);
                const double* gi = dy.row(i);
                double dot = 0.0;
                for (int j = 0; j < y.cols; ++j) dot += gi[j] * yi[j];
                double* di = da.row(i);
                for (int j = 0; j < y.cols; ++j) di[j] += yi[j] * (gi[j] - dot);
            }
            break;
        }
        case Op::LayerNorm: {
            const Mat& x = val_of(n.a);
            const Mat& g = val_of(n.b);
            Mat& dx = grad_buf(n.a);
            Mat& dg = grad_buf(n.b);
            Mat& db = grad_buf(n.c);
            const int cols = x.cols;
            for (int i = 0; i < x.rows; ++i) {
                const double mean = n.aux(i, 0);
                const double inv = n.aux(i, 1);
                const double* xi = x.row(i);
                const double* gyi = dy.row(i);
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double xh = (xi[j] - mean) * inv;
                    const double dxh = gyi[j] * g.a[j];
                    m1 += dxh;
                    m2 += dxh * xh;
                    dg.a[j] += gyi[j] * xh;
                    db.a[j] += gyi[j];
                }
                m1 /= cols;
                m2 /= cols;
                double* dxi = dx.row(i);
                for (int j = 0; j < cols; ++j) {
                    const double xh = (xi[j] - mean) * inv;
                    dxi[j] += inv * (gyi[j] * g.a[j] - m1 - xh * m2);
                }
            }
            break;
        }
        case Op::EmbedRows: {
            Mat& dt = grad_buf(n.a);
            for (size_t i = 0; i < n.idx.size(); ++i) {
                const double* src = dy.row(static_cast<int>(i));
                double* dst = dt.row(n.idx[i]);
                for (int j = 0; j < dy.cols; ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::ConcatCols: {
            Mat& da = grad_buf(n.a);
            Mat& db = grad_buf(n.b);
            for (int i = 0; i < dy.rows; ++i) {
                const double* r = dy.row(i);
                double* ra = da.row(i);
                double* rb = db.row(i);
                for (int j = 0; j < n.i0; ++j) ra[j] += r[j];
                for (int j = n.i0; j < dy.cols; ++j) rb[j - n.i0] += r[j];
            }
            break;
        }
        case Op::ConcatRows: {
            Mat& da = grad_buf(n.a);
            Mat& db = grad_buf(n.b);
            for (size_t i = 0; i < da.size(); ++i) da.a[i] += dy.a[i];
            for (size_t i = 0; i < db.size(); ++i) db.a[i] += dy.a[da.size() + i];
            break;
        }
        case Op::SliceCols: {
            Mat& da = grad_buf(n.a);
            for (int i = 0; i < dy.rows; ++i) {
                const double* r = dy.row(i);
                double* ra = da.row(i) + n.i0;
                for (int j = 0; j < dy.cols; ++j) ra[j] += r[j];
            }
            break;
        }
        case Op::RflLoss: {
            const double up = dy.a[0];
            kernels::axpy_inplace(grad_buf(n.a), up, n.aux2);
            break;
        }
        case Op::MseLoss: {
            const double up = dy.a[0];
            const Mat& p = val_of(n.a);
            Mat& da = grad_buf(n.a);
            const double k = 2.0 / static_cast<double>(p.size());
            for (size_t i = 0; i < p.size(); ++i)
                da.a[i] += up * k * (p.a[i] - n.aux.a[i]);
            break;
        }
        case Op::KlLoss: {
            const double up = dy.a[0];
            Mat& da = grad_buf(n.a);
            for (size_t i = 0; i < da.size(); ++i)
                da.a[i] += up * (n.aux2.a[i] - n.aux.a[i]);
            break;
        }
    }
}

void Tape::add_param_grads() {
    for (auto& [param, id] : param_nodes_) {
        Node& n = nodes_[id];
        if (n.grad.empty()) continue;
        Param* p = const_cast<Param*>(param);
        p->ensure_state();
        kernels::add_inplace(p->grad, n.grad);
    }
}

}  // namespace ad
}  // namespace din
