#include "spass/captioner/weights.hpp"

namespace spass::captioner {

void ModelDims::validate() const {
    if (vocab < 4) throw ShapeError("vocabulary must hold at least the four special tokens");
    if (embed == 0 || hidden == 0 || feature == 0 || locations == 0 || attention == 0) {
        throw ShapeError("model dimensions must be positive");
    }
}

namespace {

struct Shape {
    std::size_t rows, cols;
};

// Expected shape of every named tensor, in for_each order.
template <class F>
void for_each_shape(const ModelDims& d, F&& f) {
    f("embedding", Shape{d.embed, d.vocab});
    f("attention.W_a", Shape{d.attention, d.feature});
    f("attention.W_h", Shape{d.attention, d.hidden});
    f("attention.b", Shape{d.attention, 1});
    f("attention.v", Shape{1, d.attention});
    for (std::size_t g = 0; g < 4; ++g) {
        const std::string s(kGateNames[g]);
        f("lstm.W_" + s, Shape{d.hidden, d.embed});
        f("lstm.U_" + s, Shape{d.hidden, d.hidden});
        f("lstm.Z_" + s, Shape{d.hidden, d.feature});
        f("lstm.b_" + s, Shape{d.hidden, 1});
    }
    for (const char* net : {"init_h", "init_c"}) {
        const std::string s(net);
        f(s + ".W1", Shape{d.hidden, d.feature});
        f(s + ".b1", Shape{d.hidden, 1});
        f(s + ".W2", Shape{d.hidden, d.hidden});
        f(s + ".b2", Shape{d.hidden, 1});
    }
    f("output.L_o", Shape{d.vocab, d.embed});
    f("output.L_h", Shape{d.embed, d.hidden});
    f("output.L_z", Shape{d.embed, d.feature});
}

bool is_bias(const std::string& name) {
    return name == "attention.b" || name.rfind("lstm.b_", 0) == 0 || name.ends_with(".b1") ||
           name.ends_with(".b2");
}

}  // namespace

ModelWeights ModelWeights::zeros(const ModelDims& dims, ModelOptions options) {
    dims.validate();
    ModelWeights w;
    w.dims = dims;
    w.options = options;
    std::vector<Shape> shapes;
    for_each_shape(dims, [&](const std::string&, Shape s) { shapes.push_back(s); });
    std::size_t k = 0;
    w.for_each([&](const std::string&, Matrix& m) {
        m = Matrix(shapes[k].rows, shapes[k].cols);
        ++k;
    });
    return w;
}

ModelWeights ModelWeights::random(const ModelDims& dims, std::uint64_t seed, ModelOptions options) {
    ModelWeights w = zeros(dims, options);
    Rng rng(seed);
    w.for_each([&](const std::string& name, Matrix& m) {
        if (is_bias(name)) return;
        // embeddings are looked up column-wise, everything else is applied to
        // a vector of length `cols`
        const double fan_in = name == "embedding" ? static_cast<double>(m.rows) : static_cast<double>(m.cols);
        const double scale = 1.0 / std::sqrt(fan_in);
        for (double& x : m.data) x = rng.uniform(-scale, scale);
    });
    return w;
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

bool ModelWeights::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Matrix& m) { ok = ok && spass::all_finite(m.data); });
    return ok;
}

void ModelWeights::check_shapes() const {
    dims.validate();
    std::vector<std::pair<std::string, Shape>> shapes;
    for_each_shape(dims, [&](const std::string& name, Shape s) { shapes.emplace_back(name, s); });
    std::size_t k = 0;
    for_each([&](const std::string& name, const Matrix& m) {
        const auto& [expect_name, s] = shapes[k++];
        if (name != expect_name || m.rows != s.rows || m.cols != s.cols || m.data.size() != s.rows * s.cols) {
            throw ShapeError("tensor " + name + " has shape " + std::to_string(m.rows) + "x" +
                             std::to_string(m.cols) + ", expected " + std::to_string(s.rows) + "x" +
                             std::to_string(s.cols));
        }
    });
}

}  // namespace spass::captioner
