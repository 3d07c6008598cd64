#include "spass/captioner/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace spass::captioner {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'S', 'S', 'T', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr int kSidecarVersion = 1;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }
    std::size_t remaining() const { return b_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw FormatError("tensor file truncated");
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

NamedTensor to_named(const std::string& name, const Matrix& m) {
    return {name, {m.rows, m.cols}, m.data};
}

}  // namespace

std::vector<std::uint8_t> write_tensors(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        std::uint64_t count = 1;
        for (auto d : t.shape) {
            put_le<std::uint64_t>(out, d);
            count *= d;
        }
        if (count != t.values.size()) throw FormatError("tensor " + t.name + ": shape does not match value count");
        for (double v : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

std::vector<NamedTensor> read_tensors(std::span<const std::uint8_t> bytes) {
    if (!looks_like_tensor_file(bytes)) throw FormatError("not a tensor file (bad magic)");
    Reader r(bytes.subspan(8));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw FormatError("unsupported tensor file version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedTensor> out;
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor t;
        t.name = r.bytes(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw FormatError("tensor rank too large");
        std::uint64_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.shape.push_back(r.get<std::uint64_t>());
            n *= t.shape.back();
        }
        if (n > r.remaining() / 8) throw FormatError("tensor " + t.name + " truncated");
        t.values.resize(n);
        for (auto& v : t.values) v = std::bit_cast<double>(r.get<std::uint64_t>());
        out.push_back(std::move(t));
    }
    if (!r.done()) throw FormatError("trailing bytes after tensors");
    return out;
}

bool looks_like_tensor_file(std::span<const std::uint8_t> bytes) {
    return bytes.size() >= 8 && std::memcmp(bytes.data(), kMagic, 8) == 0;
}

std::vector<std::uint8_t> write_features(const FeatureMap& f) {
    return write_tensors({to_named("features", f.annotations)});
}

FeatureMap read_features(std::span<const std::uint8_t> bytes) {
    auto tensors = read_tensors(bytes);
    if (tensors.size() != 1 || tensors[0].name != "features" || tensors[0].shape.size() != 2) {
        throw FormatError("feature file must hold one 2-D tensor named 'features'");
    }
    auto& t = tensors[0];
    FeatureMap f{Matrix(t.shape[0], t.shape[1])};
    f.annotations.data = std::move(t.values);
    if (!all_finite(f.annotations.data)) throw FormatError("feature file contains non-finite values");
    return f;
}

std::vector<std::uint8_t> write_weights(const ModelWeights& w) {
    std::vector<NamedTensor> tensors;
    w.for_each([&](const std::string& name, const Matrix& m) { tensors.push_back(to_named(name, m)); });
    return write_tensors(tensors);
}

ModelWeights read_weights(std::span<const std::uint8_t> bytes, const ModelDims& dims, const ModelOptions& opts) {
    auto tensors = read_tensors(bytes);
    std::map<std::string, NamedTensor*> by_name;
    for (auto& t : tensors) by_name[t.name] = &t;
    ModelWeights w = ModelWeights::zeros(dims, opts);
    std::size_t used = 0;
    w.for_each([&](const std::string& name, Matrix& m) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("weights file is missing tensor " + name);
        const auto& t = *it->second;
        if (t.shape.size() != 2 || t.shape[0] != m.rows || t.shape[1] != m.cols) {
            throw FormatError("tensor " + name + " has the wrong shape for the declared dimensions");
        }
        m.data = t.values;
        ++used;
    });
    if (used != tensors.size()) throw FormatError("weights file holds unexpected tensors");
    return w;
}

std::string CaptionModel::sidecar_json() const {
    const auto& d = weights.dims;
    nlohmann::ordered_json j;
    j["format_version"] = kSidecarVersion;
    j["byte_order"] = "little-endian";
    j["dims"] = {{"K", d.vocab}, {"m", d.embed}, {"n", d.hidden}, {"D", d.feature}, {"L", d.locations},
                 {"attention", d.attention}};
    j["C_max"] = max_caption_length;
    j["output_uses_prev_hidden"] = weights.options.output_uses_prev_hidden;
    j["encoder"] = {{"input_size", encoder.input_size}, {"grid", encoder.grid},
                    {"channels", encoder.channels},     {"seed", encoder.seed},
                    {"leak", encoder.leak}};
    j["vocabulary"] = vocab.tokens();
    return j.dump(2) + "\n";
}

CaptionModel model_from_parts(std::span<const std::uint8_t> weights_bytes, const std::string& sidecar_json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(sidecar_json);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model sidecar: ") + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != kSidecarVersion) throw FormatError("unsupported sidecar version");
        CaptionModel model;
        ModelDims dims;
        const auto& jd = j.at("dims");
        dims.vocab = jd.at("K");
        dims.embed = jd.at("m");
        dims.hidden = jd.at("n");
        dims.feature = jd.at("D");
        dims.locations = jd.at("L");
        dims.attention = jd.at("attention");
        ModelOptions opts;
        opts.output_uses_prev_hidden = j.at("output_uses_prev_hidden");
        model.max_caption_length = j.at("C_max");
        const auto& je = j.at("encoder");
        model.encoder.input_size = je.at("input_size");
        model.encoder.grid = je.at("grid");
        model.encoder.channels = je.at("channels").get<std::array<std::size_t, 3>>();
        model.encoder.seed = je.at("seed");
        model.encoder.leak = je.at("leak");
        model.vocab = text::Vocabulary::from_json(j.at("vocabulary").dump());
        if (model.vocab.size() != dims.vocab) throw FormatError("vocabulary size does not match K");
        model.weights = read_weights(weights_bytes, dims, opts);
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model sidecar: ") + e.what());
    }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_model(const CaptionModel& model, const std::filesystem::path& path) {
    model.weights.check_shapes();
    write_file_atomic(path, write_weights(model.weights));
    auto sidecar = path;
    sidecar += ".json";
    write_file_atomic(sidecar, model.sidecar_json());
}

CaptionModel load_model(const std::filesystem::path& path) {
    auto sidecar = path;
    sidecar += ".json";
    const auto json_bytes = read_file(sidecar);
    return model_from_parts(read_file(path), std::string(json_bytes.begin(), json_bytes.end()));
}

}  // namespace spass::captioner
