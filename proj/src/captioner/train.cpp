#include "spass/captioner/train.hpp"

#include <cmath>
#include <iomanip>
#include <map>

#include "spass/similarity.hpp"

namespace spass::captioner {

AdamOptimizer::AdamOptimizer(const ModelWeights& like, const AdamConfig& cfg)
    : cfg_(cfg), m_(ModelWeights::zeros(like.dims, like.options)), v_(ModelWeights::zeros(like.dims, like.options)) {
    if (!(cfg.learning_rate >= 0.0)) throw text::ParameterError("learning rate must be non-negative");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
        throw text::ParameterError("Adam betas must be in [0, 1)");
    }
}

void AdamOptimizer::step(ModelWeights& w, const ModelWeights& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<Matrix*> ws, ms, vs;
    std::vector<const Matrix*> gs;
    w.for_each([&](const std::string&, Matrix& x) { ws.push_back(&x); });
    grad.for_each([&](const std::string&, const Matrix& x) { gs.push_back(&x); });
    m_.for_each([&](const std::string&, Matrix& x) { ms.push_back(&x); });
    v_.for_each([&](const std::string&, Matrix& x) { vs.push_back(&x); });
    for (std::size_t k = 0; k < ws.size(); ++k) {
        auto& wd = ws[k]->data;
        const auto& gd = gs[k]->data;
        auto& md = ms[k]->data;
        auto& vd = vs[k]->data;
        for (std::size_t i = 0; i < wd.size(); ++i) {
            md[i] = cfg_.beta1 * md[i] + (1.0 - cfg_.beta1) * gd[i];
            vd[i] = cfg_.beta2 * vd[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
            const double mhat = md[i] / bc1;
            const double vhat = vd[i] / bc2;
            wd[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

BleuScores evaluate_bleu(const std::vector<TrainingSample>& samples, const ModelWeights& w,
                         const text::Vocabulary& vocab, std::size_t max_len) {
    BleuScores mean{};
    if (samples.empty()) return mean;
    DecodeOptions opts;
    opts.max_len = max_len;
    for (const auto& s : samples) {
        const auto hyp = text::decode(generate(s.features, w, opts).caption, vocab);
        const auto ref = text::decode(s.caption, vocab);
        if (hyp.empty() || ref.empty()) continue;
        const similarity::SearchTaskSet refs({similarity::SearchTask{0, text::join(ref), ref}});
        const similarity::ReferenceIndex index(refs, 4);
        for (int n = 1; n <= 4; ++n) {
            mean[static_cast<std::size_t>(n - 1)] += similarity::score(hyp, index, similarity::ScoreConfig::uniform(n)).value;
        }
    }
    for (double& b : mean) b /= static_cast<double>(samples.size());
    return mean;
}

TrainResult fit(const std::vector<TrainingSample>& train_set, const std::vector<TrainingSample>& validation_set,
                const text::Vocabulary& vocab, ModelWeights init, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
    if (train_set.empty()) throw text::ParameterError("fit: empty training set");
    if (validation_set.empty()) throw text::ParameterError("fit: empty validation set");
    if (cfg.batch_size == 0) throw text::ParameterError("batch size must be positive");
    init.check_shapes();
    if (init.dims.vocab != vocab.size()) throw ShapeError("model K does not match the vocabulary");

    TrainResult result;
    result.train_size = train_set.size();
    result.validation_size = validation_set.size();
    result.weights = init;

    ModelWeights w = std::move(init);
    AdamOptimizer adam(w, cfg.adam);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_bleu4 = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_tokens = 0.0;
        std::size_t tokens = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<const TrainingSample*> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
                batch.push_back(&train_set[order[k]]);
            }
            auto lg = loss_and_gradients(std::span<const TrainingSample* const>(batch), w, cfg.dropout, rng.next());
            adam.step(w, lg.gradients);
            loss_tokens += lg.loss * static_cast<double>(lg.tokens);
            tokens += lg.tokens;
        }
        if (!w.all_finite()) throw NumericError("training diverged: non-finite weights");

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_tokens / static_cast<double>(tokens);
        m.bleu = evaluate_bleu(validation_set, w, vocab, cfg.max_caption_length);
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);

        if (m.bleu[3] > best_bleu4) {
            best_bleu4 = m.bleu[3];
            result.weights = w;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
        if (cfg.target_loss && m.train_loss < *cfg.target_loss) break;
    }
    return result;
}

TrainResult train(const std::vector<TrainingSample>& dataset, const text::Vocabulary& vocab, ModelWeights init,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
        throw text::ParameterError("validation fraction must be in (0, 1)");
    }
    std::vector<std::size_t> kept;
    std::size_t removed = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::size_t len = dataset[i].caption.ids.size();
        if (len == 0 || len > cfg.max_caption_length) ++removed;
        else kept.push_back(i);
    }
    if (kept.size() < 2) throw text::ParameterError("train: need at least two usable samples");

    Rng split_rng(cfg.seed ^ 0x5bd1e995ULL);
    split_rng.shuffle(kept);
    const auto n_val = static_cast<std::size_t>(
        std::max(1.0, std::round(static_cast<double>(kept.size()) * cfg.validation_fraction)));
    if (n_val >= kept.size()) throw text::ParameterError("train: degenerate split, no training samples left");

    std::vector<TrainingSample> val, tr;
    for (std::size_t k = 0; k < kept.size(); ++k) (k < n_val ? val : tr).push_back(dataset[kept[k]]);
    auto result = fit(tr, val, vocab, std::move(init), cfg, on_epoch);
    result.removed_too_long = removed;
    return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochMetrics>& history) {
    out << "epoch,train_loss,bleu1,bleu2,bleu3,bleu4\n";
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(6) << std::fixed;
    for (const auto& m : history) {
        out << m.epoch << ',' << m.train_loss << ',' << m.bleu[0] << ',' << m.bleu[1] << ',' << m.bleu[2] << ','
            << m.bleu[3] << '\n';
    }
    out.flags(flags);
    out.precision(prec);
}

ModelWeights remap_vocabulary(const ModelWeights& w, const text::Vocabulary& old_vocab,
                              const text::Vocabulary& new_vocab, std::uint64_t seed) {
    if (w.dims.vocab != old_vocab.size()) throw ShapeError("weights do not match the old vocabulary");
    ModelDims dims = w.dims;
    dims.vocab = new_vocab.size();
    // fresh tensors supply initial values for unseen tokens
    const ModelWeights fresh = ModelWeights::random(dims, seed, w.options);
    ModelWeights out = w;
    out.dims = dims;
    out.embedding = fresh.embedding;
    out.out_vocab = fresh.out_vocab;
    for (text::TokenId k = 0; k < new_vocab.size(); ++k) {
        const auto& tok = new_vocab.token_of(k);
        if (!old_vocab.contains(tok)) continue;
        const auto old = old_vocab.id_of(tok);
        for (std::size_t r = 0; r < dims.embed; ++r) out.embedding(r, k) = w.embedding(r, old);
        for (std::size_t c = 0; c < dims.embed; ++c) out.out_vocab(k, c) = w.out_vocab(old, c);
    }
    return out;
}

}  // namespace spass::captioner
