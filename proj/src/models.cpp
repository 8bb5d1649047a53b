#include "onadapt/models.hpp"

#include <cmath>

#include "onadapt/error.hpp"
#include "onadapt/rng.hpp"

namespace onadapt {

namespace {

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using MutMap = Eigen::Map<Eigen::MatrixXd>;
using MutVecMap = Eigen::Map<Eigen::VectorXd>;

class LayoutBuilder {
public:
    LayoutBuilder& add(std::string name, Index length) {
        blocks_.push_back({std::move(name), total_, length});
        total_ += length;
        return *this;
    }

    ParameterVector zeros() const {
        ParameterVector p;
        p.layout = blocks_;
        p.values = Eigen::VectorXd::Zero(total_);
        return p;
    }

private:
    std::vector<Block> blocks_;
    Index total_ = 0;
};

void fill_uniform(ParameterVector& p, const std::string& block, double bound, Rng& rng) {
    const Block& b = p.block(block);
    for (Index i = 0; i < b.length; ++i) {
        p.values[b.offset + i] = rng.uniform(-bound, bound);
    }
}

ConstMap mat(const Eigen::VectorXd& theta, const Block& b, Index rows, Index cols) {
    return ConstMap(theta.data() + b.offset, rows, cols);
}

ConstVecMap vec(const Eigen::VectorXd& theta, const Block& b) {
    return ConstVecMap(theta.data() + b.offset, b.length);
}

MutMap mat(Eigen::VectorXd& grad, const Block& b, Index rows, Index cols) {
    return MutMap(grad.data() + b.offset, rows, cols);
}

MutVecMap vec(Eigen::VectorXd& grad, const Block& b) {
    return MutVecMap(grad.data() + b.offset, b.length);
}

void require_layout(const ParameterVector& expected, const ParameterVector& given) {
    if (!expected.same_layout(given) || given.values.size() != expected.values.size()) {
        throw ConfigError("parameter layout does not match model architecture");
    }
}

void require_positive(Index v, const char* field) {
    if (v < 1) {
        throw ConfigError(std::string("model.") + field + " must be at least 1");
    }
}

// ---- linear ----

ParameterVector linear_layout(const LinearSpec& s) {
    LayoutBuilder lb;
    lb.add("W", s.output_dim * s.input_dim);
    if (s.bias) {
        lb.add("b", s.output_dim);
    }
    return lb.zeros();
}

void validate(const LinearSpec& s) {
    require_positive(s.input_dim, "input_dim");
    require_positive(s.output_dim, "output_dim");
    require_positive(s.window, "window");
}

// ---- mlp ----

ParameterVector mlp_layout(const MlpSpec& s) {
    const Index in = s.input_dim * s.window;
    return LayoutBuilder()
        .add("W1", s.hidden * in)
        .add("b1", s.hidden)
        .add("W2", s.output_dim * s.hidden)
        .add("b2", s.output_dim)
        .zeros();
}

void validate(const MlpSpec& s) {
    require_positive(s.input_dim, "input_dim");
    require_positive(s.output_dim, "output_dim");
    require_positive(s.window, "window");
    require_positive(s.hidden, "hidden");
}

Eigen::VectorXd stack_window(const InputWindow& x) {
    // Row-major over the window so the newest measurement comes first.
    Eigen::VectorXd u(x.length() * x.dim());
    for (Index r = 0; r < x.length(); ++r) {
        u.segment(r * x.dim(), x.dim()) = x.steps.row(r).transpose();
    }
    return u;
}

// ---- recurrent ----

ParameterVector recurrent_layout(const RecurrentSpec& s) {
    const Index h = s.hidden;
    LayoutBuilder lb;
    lb.add("encoder.W_x", 3 * h * s.input_dim)
        .add("encoder.W_h", 3 * h * h)
        .add("encoder.b_x", 3 * h)
        .add("encoder.b_h", 3 * h)
        .add("decoder.W", s.output_dim * h)
        .add("decoder.b", s.output_dim);
    if (s.classes > 0) {
        lb.add("classifier.W1", s.classifier_hidden * h)
            .add("classifier.b1", s.classifier_hidden)
            .add("classifier.W2", s.classes * s.classifier_hidden)
            .add("classifier.b2", s.classes);
    }
    return lb.zeros();
}

void validate(const RecurrentSpec& s) {
    require_positive(s.input_dim, "input_dim");
    require_positive(s.output_dim, "output_dim");
    require_positive(s.window, "window");
    require_positive(s.hidden, "hidden");
    if (s.hidden > 16) {
        throw ConfigError("model.hidden must be at most 16 for the toy recurrent encoder");
    }
    if (s.classes < 0 || s.classes == 1) {
        throw ConfigError("model.classes must be 0 (no classifier) or at least 2");
    }
    if (s.classes > 0) {
        require_positive(s.classifier_hidden, "classifier_hidden");
    }
}

// Column k holds step k, which consumed window row n-1-k (oldest first).
struct GruTrace {
    Eigen::MatrixXd h_prev, r, z, n, hn;
    Eigen::VectorXd h;
};

GruTrace run_gru(const RecurrentSpec& s, const ParameterVector& layout, const Eigen::VectorXd& theta,
                 const InputWindow& x, bool keep_steps) {
    const Index H = s.hidden;
    const Index len = x.length();
    const auto Wx = mat(theta, layout.block("encoder.W_x"), 3 * H, s.input_dim);
    const auto Wh = mat(theta, layout.block("encoder.W_h"), 3 * H, H);
    const auto bx = vec(theta, layout.block("encoder.b_x"));
    const auto bh = vec(theta, layout.block("encoder.b_h"));

    GruTrace trace;
    if (keep_steps) {
        for (auto* m : {&trace.h_prev, &trace.r, &trace.z, &trace.n, &trace.hn}) m->resize(H, len);
    }
    // Input projections of every row at once; column j is row j of the window.
    Eigen::MatrixXd GX = Wx * x.steps.transpose();
    GX.colwise() += bx;
    Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd gh(3 * H), r(H), z(H), n(H);
    for (Index k = 0; k < len; ++k) {
        const auto gx = GX.col(len - 1 - k);
        gh.noalias() = Wh * h;
        gh += bh;
        r = (1.0 + (-(gx.head(H) + gh.head(H))).array().exp()).inverse().matrix();
        z = (1.0 + (-(gx.segment(H, H) + gh.segment(H, H))).array().exp()).inverse().matrix();
        n = (gx.tail(H) + r.cwiseProduct(gh.tail(H))).array().tanh().matrix();
        if (keep_steps) {
            trace.h_prev.col(k) = h;
            trace.r.col(k) = r;
            trace.z.col(k) = z;
            trace.n.col(k) = n;
            trace.hn.col(k) = gh.tail(H);
        }
        h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h);
    }
    trace.h = std::move(h);
    return trace;
}

}  // namespace

// ---------------------------------------------------------------- LinearModel

LinearModel::LinearModel(const LinearSpec& spec, std::uint64_t seed)
    : Model(ParameterVector{}, seed), spec_(spec) {
    validate(spec_);
    params_ = linear_layout(spec_);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.input_dim));
    fill_uniform(params_, "W", bound, rng);
    if (spec_.bias) {
        fill_uniform(params_, "b", bound, rng);
    }
}

LinearModel::LinearModel(const LinearSpec& spec, ParameterVector params, std::uint64_t seed)
    : Model(std::move(params), seed), spec_(spec) {
    validate(spec_);
    require_layout(linear_layout(spec_), params_);
}

ModelPtr LinearModel::from_weights(const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                                   Index window) {
    LinearSpec spec{weight.cols(), weight.rows(), window, true};
    if (bias.size() != weight.rows()) {
        throw ConfigError("bias length must equal the number of weight rows");
    }
    ParameterVector p = linear_layout(spec);
    p.values.head(weight.size()) = Eigen::Map<const Eigen::VectorXd>(weight.data(), weight.size());
    p.values.tail(bias.size()) = bias;
    return std::make_shared<LinearModel>(spec, std::move(p));
}

ModelPtr LinearModel::from_weights(const Eigen::MatrixXd& weight, Index window) {
    LinearSpec spec{weight.cols(), weight.rows(), window, false};
    ParameterVector p = linear_layout(spec);
    p.values = Eigen::Map<const Eigen::VectorXd>(weight.data(), weight.size());
    return std::make_shared<LinearModel>(spec, std::move(p));
}

ModelPtr LinearModel::with_params(ParameterVector params) const {
    return std::make_shared<LinearModel>(spec_, std::move(params), seed_);
}

Eigen::VectorXd LinearModel::forward(const Eigen::VectorXd& theta, const InputWindow& x) const {
    const auto W = mat(theta, params_.block("W"), spec_.output_dim, spec_.input_dim);
    Eigen::VectorXd y = W * x.steps.row(0).transpose();
    if (spec_.bias) {
        y += vec(theta, params_.block("b"));
    }
    return y;
}

Vjp LinearModel::backward(const Eigen::VectorXd& theta, const InputWindow& x,
                          const Eigen::VectorXd& output_grad, const Eigen::VectorXd&) const {
    Vjp g{Eigen::VectorXd::Zero(theta.size()), Eigen::MatrixXd::Zero(x.length(), x.dim())};
    const Block& wb = params_.block("W");
    mat(g.params, wb, spec_.output_dim, spec_.input_dim) = output_grad * x.steps.row(0);
    if (spec_.bias) {
        vec(g.params, params_.block("b")) = output_grad;
    }
    g.input.row(0) = (mat(theta, wb, spec_.output_dim, spec_.input_dim).transpose() * output_grad).transpose();
    return g;
}

nlohmann::json LinearModel::architecture() const {
    return {{"kind", "linear"},
            {"input_dim", spec_.input_dim},
            {"output_dim", spec_.output_dim},
            {"window", spec_.window},
            {"bias", spec_.bias}};
}

// ------------------------------------------------------------------- MlpModel

MlpModel::MlpModel(const MlpSpec& spec, std::uint64_t seed) : Model(ParameterVector{}, seed), spec_(spec) {
    validate(spec_);
    params_ = mlp_layout(spec_);
    Rng rng(seed);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(spec_.input_dim * spec_.window));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(spec_.hidden));
    fill_uniform(params_, "W1", b1, rng);
    fill_uniform(params_, "b1", b1, rng);
    fill_uniform(params_, "W2", b2, rng);
    fill_uniform(params_, "b2", b2, rng);
}

MlpModel::MlpModel(const MlpSpec& spec, ParameterVector params, std::uint64_t seed)
    : Model(std::move(params), seed), spec_(spec) {
    validate(spec_);
    require_layout(mlp_layout(spec_), params_);
}

ModelPtr MlpModel::with_params(ParameterVector params) const {
    return std::make_shared<MlpModel>(spec_, std::move(params), seed_);
}

Eigen::VectorXd MlpModel::forward(const Eigen::VectorXd& theta, const InputWindow& x) const {
    const Index in = spec_.input_dim * spec_.window;
    const auto W1 = mat(theta, params_.block("W1"), spec_.hidden, in);
    const auto W2 = mat(theta, params_.block("W2"), spec_.output_dim, spec_.hidden);
    const Eigen::VectorXd h =
        (W1 * stack_window(x) + vec(theta, params_.block("b1"))).array().tanh().matrix();
    return W2 * h + vec(theta, params_.block("b2"));
}

Vjp MlpModel::backward(const Eigen::VectorXd& theta, const InputWindow& x,
                       const Eigen::VectorXd& output_grad, const Eigen::VectorXd&) const {
    const Index in = spec_.input_dim * spec_.window;
    const Block& w1b = params_.block("W1");
    const Block& w2b = params_.block("W2");
    const auto W1 = mat(theta, w1b, spec_.hidden, in);
    const auto W2 = mat(theta, w2b, spec_.output_dim, spec_.hidden);
    const Eigen::VectorXd u = stack_window(x);
    const Eigen::VectorXd h = (W1 * u + vec(theta, params_.block("b1"))).array().tanh().matrix();

    Vjp g{Eigen::VectorXd::Zero(theta.size()), Eigen::MatrixXd::Zero(x.length(), x.dim())};
    mat(g.params, w2b, spec_.output_dim, spec_.hidden) = output_grad * h.transpose();
    vec(g.params, params_.block("b2")) = output_grad;
    const Eigen::VectorXd da = (W2.transpose() * output_grad).cwiseProduct((1.0 - h.array().square()).matrix());
    mat(g.params, w1b, spec_.hidden, in) = da * u.transpose();
    vec(g.params, params_.block("b1")) = da;
    const Eigen::VectorXd du = W1.transpose() * da;
    for (Index r = 0; r < x.length(); ++r) {
        g.input.row(r) = du.segment(r * x.dim(), x.dim()).transpose();
    }
    return g;
}

nlohmann::json MlpModel::architecture() const {
    return {{"kind", "mlp"},
            {"input_dim", spec_.input_dim},
            {"output_dim", spec_.output_dim},
            {"window", spec_.window},
            {"hidden", spec_.hidden}};
}

// ------------------------------------------------------------- RecurrentModel

RecurrentModel::RecurrentModel(const RecurrentSpec& spec, std::uint64_t seed)
    : Model(ParameterVector{}, seed), spec_(spec) {
    validate(spec_);
    params_ = recurrent_layout(spec_);
    Rng rng(seed);
    const double bh = 1.0 / std::sqrt(static_cast<double>(spec_.hidden));
    for (const char* name : {"encoder.W_x", "encoder.W_h", "encoder.b_x", "encoder.b_h", "decoder.W",
                             "decoder.b"}) {
        fill_uniform(params_, name, bh, rng);
    }
    if (spec_.classes > 0) {
        const double bc = 1.0 / std::sqrt(static_cast<double>(spec_.classifier_hidden));
        fill_uniform(params_, "classifier.W1", bh, rng);
        fill_uniform(params_, "classifier.b1", bh, rng);
        fill_uniform(params_, "classifier.W2", bc, rng);
        fill_uniform(params_, "classifier.b2", bc, rng);
    }
}

RecurrentModel::RecurrentModel(const RecurrentSpec& spec, ParameterVector params, std::uint64_t seed)
    : Model(std::move(params), seed), spec_(spec) {
    validate(spec_);
    require_layout(recurrent_layout(spec_), params_);
}

ModelPtr RecurrentModel::with_params(ParameterVector params) const {
    return std::make_shared<RecurrentModel>(spec_, std::move(params), seed_);
}

Eigen::VectorXd RecurrentModel::encode(const Eigen::VectorXd& theta, const InputWindow& x) const {
    return run_gru(spec_, params_, theta, x, false).h;
}

Eigen::VectorXd RecurrentModel::forward(const Eigen::VectorXd& theta, const InputWindow& x) const {
    const Eigen::VectorXd h = encode(theta, x);
    const auto Wd = mat(theta, params_.block("decoder.W"), spec_.output_dim, spec_.hidden);
    return Wd * h + vec(theta, params_.block("decoder.b"));
}

Eigen::VectorXd RecurrentModel::logits(const Eigen::VectorXd& theta, const InputWindow& x) const {
    if (spec_.classes == 0) {
        return Model::logits(theta, x);
    }
    const Eigen::VectorXd h = encode(theta, x);
    const auto W1 = mat(theta, params_.block("classifier.W1"), spec_.classifier_hidden, spec_.hidden);
    const auto W2 = mat(theta, params_.block("classifier.W2"), spec_.classes, spec_.classifier_hidden);
    const Eigen::VectorXd c = (W1 * h + vec(theta, params_.block("classifier.b1"))).array().tanh().matrix();
    return W2 * c + vec(theta, params_.block("classifier.b2"));
}

Vjp RecurrentModel::backward(const Eigen::VectorXd& theta, const InputWindow& x,
                             const Eigen::VectorXd& output_grad,
                             const Eigen::VectorXd& logit_grad) const {
    const Index H = spec_.hidden;
    const Index d = spec_.input_dim;
    const GruTrace trace = run_gru(spec_, params_, theta, x, true);
    const Eigen::VectorXd& h = trace.h;

    Vjp g{Eigen::VectorXd::Zero(theta.size()), Eigen::MatrixXd::Zero(x.length(), x.dim())};

    const Block& wdb = params_.block("decoder.W");
    mat(g.params, wdb, spec_.output_dim, H) = output_grad * h.transpose();
    vec(g.params, params_.block("decoder.b")) = output_grad;
    Eigen::VectorXd dh = mat(theta, wdb, spec_.output_dim, H).transpose() * output_grad;

    if (logit_grad.size() > 0) {
        if (spec_.classes == 0) {
            throw UnsupportedError("recurrent model has no classifier head");
        }
        const Index C = spec_.classes;
        const Index Hc = spec_.classifier_hidden;
        const Block& w1b = params_.block("classifier.W1");
        const Block& w2b = params_.block("classifier.W2");
        const auto W1 = mat(theta, w1b, Hc, H);
        const auto W2 = mat(theta, w2b, C, Hc);
        const Eigen::VectorXd c = (W1 * h + vec(theta, params_.block("classifier.b1"))).array().tanh().matrix();
        mat(g.params, w2b, C, Hc) = logit_grad * c.transpose();
        vec(g.params, params_.block("classifier.b2")) = logit_grad;
        const Eigen::VectorXd dac = (W2.transpose() * logit_grad).cwiseProduct((1.0 - c.array().square()).matrix());
        mat(g.params, w1b, Hc, H) = dac * h.transpose();
        vec(g.params, params_.block("classifier.b1")) = dac;
        dh += W1.transpose() * dac;
    }

    const Block& wxb = params_.block("encoder.W_x");
    const Block& whb = params_.block("encoder.W_h");
    const auto Wx = mat(theta, wxb, 3 * H, d);
    const auto Wh = mat(theta, whb, 3 * H, H);
    auto dWx = mat(g.params, wxb, 3 * H, d);
    auto dWh = mat(g.params, whb, 3 * H, H);
    auto dbx = vec(g.params, params_.block("encoder.b_x"));
    auto dbh = vec(g.params, params_.block("encoder.b_h"));

    // Gate pre-activation adjoints per step; input and weight gradients are formed in bulk after the loop.
    const Index n = x.length();
    Eigen::MatrixXd DGX(3 * H, n);  // column j pairs with window row j
    Eigen::MatrixXd DGH(3 * H, n);  // column k pairs with trace step k
    for (Index k = n - 1; k >= 0; --k) {
        const Eigen::ArrayXd z = trace.z.col(k).array();
        const Eigen::ArrayXd r = trace.r.col(k).array();
        const Eigen::ArrayXd nn = trace.n.col(k).array();
        const Eigen::ArrayXd dn = dh.array() * (1.0 - z);
        const Eigen::ArrayXd dz = dh.array() * (trace.h_prev.col(k).array() - nn);
        const Eigen::ArrayXd dan = dn * (1.0 - nn.square());
        const Eigen::ArrayXd dar = dan * trace.hn.col(k).array() * r * (1.0 - r);
        const Eigen::ArrayXd daz = dz * z * (1.0 - z);

        auto dgx = DGX.col(n - 1 - k);
        auto dgh = DGH.col(k);
        dgx << dar.matrix(), daz.matrix(), dan.matrix();
        dgh << dar.matrix(), daz.matrix(), (dan * r).matrix();
        dh = (dh.array() * z).matrix() + Wh.transpose() * dgh;
    }
    dWx.noalias() += DGX * x.steps;
    dbx += DGX.rowwise().sum();
    dWh.noalias() += DGH * trace.h_prev.transpose();
    dbh += DGH.rowwise().sum();
    g.input.noalias() = DGX.transpose() * Wx;
    return g;
}

nlohmann::json RecurrentModel::architecture() const {
    return {{"kind", "recurrent"},
            {"input_dim", spec_.input_dim},
            {"output_dim", spec_.output_dim},
            {"window", spec_.window},
            {"hidden", spec_.hidden},
            {"classifier_hidden", spec_.classifier_hidden},
            {"classes", spec_.classes}};
}

// ------------------------------------------------------------------- factory

namespace {

template <typename T>
T field(const nlohmann::json& doc, const char* key, T fallback) {
    if (!doc.contains(key)) {
        return fallback;
    }
    try {
        return doc.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("model.") + key + " has the wrong type");
    }
}

LinearSpec linear_spec(const nlohmann::json& a) {
    LinearSpec s;
    s.input_dim = field<Index>(a, "input_dim", s.input_dim);
    s.output_dim = field<Index>(a, "output_dim", s.input_dim);
    s.window = field<Index>(a, "window", s.window);
    s.bias = field<bool>(a, "bias", s.bias);
    return s;
}

MlpSpec mlp_spec(const nlohmann::json& a) {
    MlpSpec s;
    s.input_dim = field<Index>(a, "input_dim", s.input_dim);
    s.output_dim = field<Index>(a, "output_dim", s.input_dim);
    s.window = field<Index>(a, "window", s.window);
    s.hidden = field<Index>(a, "hidden", s.hidden);
    return s;
}

RecurrentSpec recurrent_spec(const nlohmann::json& a) {
    RecurrentSpec s;
    s.input_dim = field<Index>(a, "input_dim", s.input_dim);
    s.output_dim = field<Index>(a, "output_dim", s.input_dim);
    s.window = field<Index>(a, "window", s.window);
    s.hidden = field<Index>(a, "hidden", s.hidden);
    s.classifier_hidden = field<Index>(a, "classifier_hidden", s.classifier_hidden);
    s.classes = field<Index>(a, "classes", s.classes);
    return s;
}

std::string kind_of(const nlohmann::json& a) {
    if (!a.is_object() || !a.contains("kind") || !a.at("kind").is_string()) {
        throw ConfigError("model.kind must be one of linear, mlp, recurrent");
    }
    return a.at("kind").get<std::string>();
}

}  // namespace

ModelPtr make_model(const nlohmann::json& architecture, std::uint64_t seed) {
    const std::string kind = kind_of(architecture);
    if (kind == "linear") {
        return std::make_shared<LinearModel>(linear_spec(architecture), seed);
    }
    if (kind == "mlp") {
        return std::make_shared<MlpModel>(mlp_spec(architecture), seed);
    }
    if (kind == "recurrent") {
        return std::make_shared<RecurrentModel>(recurrent_spec(architecture), seed);
    }
    throw ConfigError("model.kind must be one of linear, mlp, recurrent (got '" + kind + "')");
}

ModelPtr model_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || doc.value("format", "") != "onadapt-model") {
        throw ConfigError("not an onadapt model document");
    }
    ParameterVector p;
    try {
        for (const auto& b : doc.at("layout")) {
            p.layout.push_back({b.at("name").get<std::string>(), b.at("offset").get<Index>(),
                                b.at("length").get<Index>()});
        }
        const auto values = doc.at("values").get<std::vector<double>>();
        p.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model document: ") + e.what());
    }
    const auto& a = doc.at("architecture");
    const auto seed = doc.value<std::uint64_t>("seed", 0);
    const std::string kind = kind_of(a);
    if (kind == "linear") {
        return std::make_shared<LinearModel>(linear_spec(a), std::move(p), seed);
    }
    if (kind == "mlp") {
        return std::make_shared<MlpModel>(mlp_spec(a), std::move(p), seed);
    }
    if (kind == "recurrent") {
        return std::make_shared<RecurrentModel>(recurrent_spec(a), std::move(p), seed);
    }
    throw ConfigError("unknown model kind '" + kind + "'");
}

std::vector<std::string> default_mask_blocks(const Model& model) {
    if (model.kind() == "recurrent") {
        return {"encoder."};
    }
    return {"all"};
}

}  // namespace onadapt
