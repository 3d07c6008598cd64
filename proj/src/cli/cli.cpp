#include "spass/cli.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "spass/archive.hpp"
#include "spass/captioner/synthetic.hpp"
#include "spass/downlink.hpp"
#include "spass/pipeline_json.hpp"
#include "spass/service.hpp"

namespace spass::cli {

namespace fs = std::filesystem;
using pipeline::Json;

namespace {

// Raised for bad input data; maps to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DataError("cannot read " + p.string());
    return captioner::read_file(p);
}

void write_bytes(const fs::path& p, std::span<const std::uint8_t> bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + p.string());
}

// One task per non-blank line.
std::vector<std::string> read_task_file(const fs::path& p) {
    std::vector<std::string> out;
    std::istringstream in(read_text(p));
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
    }
    return out;
}

void emit_json(std::ostream& out, Json body) {
    Json j;
    j["schema_version"] = service::kSchemaVersion;
    for (auto& [k, v] : body.items()) j[k] = std::move(v);
    out << j.dump(2) << '\n';
}

std::unique_ptr<pipeline::Pipeline> open_store(const fs::path& dir, bool must_exist,
                                               pipeline::PipelineConfig cfg = {}) {
    if (must_exist && !fs::exists(dir / "state.json")) throw DataError("not a data directory: " + dir.string());
    return std::make_unique<pipeline::Pipeline>(dir, std::move(cfg));
}

captioner::FeatureMap features_of(const fs::path& p, const captioner::CaptionModel& m) {
    const auto bytes = read_bytes(p);
    if (captioner::looks_like_tensor_file(bytes)) {
        auto f = captioner::read_features(bytes);
        f.validate(m.weights.dims.locations, m.weights.dims.feature);
        return f;
    }
    return captioner::TinyEncoder(m.encoder).encode(captioner::decode_image(bytes));
}

struct TrainFlags {
    std::size_t epochs = 200;
    double lr = 1e-3;
    std::size_t batch = 16;
    std::size_t patience = 20;
    double dropout = 0.0;
    double val_fraction = 0.10;
    std::size_t embed = 32, hidden = 64;
    std::uint64_t seed = 1;

    void add(CLI::App* sub) {
        sub->add_option("--epochs", epochs, "maximum epochs")->capture_default_str();
        sub->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
        sub->add_option("--batch", batch, "minibatch size")->capture_default_str();
        sub->add_option("--patience", patience, "early-stopping patience in epochs")->capture_default_str();
        sub->add_option("--dropout", dropout, "dropout rate")->capture_default_str();
        sub->add_option("--val-fraction", val_fraction, "validation split")->capture_default_str();
        sub->add_option("--embed", embed, "embedding width")->capture_default_str();
        sub->add_option("--hidden", hidden, "LSTM width")->capture_default_str();
        sub->add_option("--seed", seed, "random seed")->capture_default_str();
    }
    captioner::TrainConfig config() const {
        captioner::TrainConfig t;
        t.max_epochs = epochs;
        t.adam.learning_rate = lr;
        t.batch_size = batch;
        t.patience = patience;
        t.dropout = dropout;
        t.validation_fraction = val_fraction;
        t.seed = seed;
        return t;
    }
};

// ---- subcommands

int cmd_score(std::ostream& out, const std::string& caption, const std::vector<std::string>& task_files,
              const std::vector<std::string>& task_texts, int uniform, bool json) {
    std::vector<std::string> texts = task_texts;
    for (const auto& f : task_files) {
        const auto more = read_task_file(f);
        texts.insert(texts.end(), more.begin(), more.end());
    }
    const auto tasks = similarity::SearchTaskSet::from_texts(texts);
    const auto cfg = uniform > 0 ? similarity::ScoreConfig::uniform(uniform) : similarity::ScoreConfig{};
    const auto tokens = text::tokenize(caption);
    const auto s = similarity::score(tokens, tasks, cfg);
    if (json) {
        Json body = pipeline::to_json(s);
        body["caption"] = caption;
        body["tokens"] = tokens;
        emit_json(out, std::move(body));
    } else {
        out << "value\t" << num(s.value) << "\n";
        out << "log_value\t" << num(s.log_value) << "\n";
        for (std::size_t n = 0; n < s.precisions.size(); ++n) out << "p" << n + 1 << "\t" << num(s.precisions[n]) << "\n";
        out << "eta\t" << num(s.brevity_penalty) << "\n";
    }
    return kExitOk;
}

void print_ranking(std::ostream& out, const std::vector<similarity::RankedItem>& ranked,
                   const std::map<std::string, std::string>& captions, bool json) {
    if (json) {
        Json items = Json::array();
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            Json j;
            j["position"] = i + 1;
            j["id"] = ranked[i].id;
            j["caption"] = captions.at(ranked[i].id);
            j["score"] = pipeline::to_json(ranked[i].score);
            items.push_back(std::move(j));
        }
        emit_json(out, {{"items", std::move(items)}});
        return;
    }
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        out << i + 1 << "\t" << ranked[i].id << "\t" << num(ranked[i].score.value) << "\t"
            << captions.at(ranked[i].id) << "\n";
    }
}

int cmd_rank(std::ostream& out, const std::string& data, const std::string& task_set, const std::string& captions_file,
             const std::vector<std::string>& task_files, const std::vector<std::string>& task_texts, bool json) {
    std::vector<std::string> texts = task_texts;
    for (const auto& f : task_files) {
        const auto more = read_task_file(f);
        texts.insert(texts.end(), more.begin(), more.end());
    }
    std::map<std::string, std::string> captions;
    if (!data.empty()) {
        const auto store = open_store(data, true);
        std::vector<similarity::RankedItem> ranked;
        if (!task_set.empty()) {
            ranked = store->rank(task_set);
        } else {
            ranked = store->rank_texts(texts);
        }
        for (const auto& r : ranked) {
            const auto c = store->display_caption(r.id);
            captions[r.id] = c ? c->caption : "";
        }
        print_ranking(out, ranked, captions, json);
        return kExitOk;
    }
    // id<TAB>caption per line
    std::vector<similarity::CandidateCaption> cands;
    std::istringstream in(read_text(captions_file));
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw DataError(captions_file + ":" + std::to_string(line_no) + ": expected id<TAB>caption");
        }
        const std::string id = line.substr(0, tab);
        if (!captions.emplace(id, line.substr(tab + 1)).second) throw DataError("duplicate id " + id);
        cands.push_back({id, text::tokenize(line.substr(tab + 1))});
    }
    const auto tasks = similarity::SearchTaskSet::from_texts(texts);
    print_ranking(out, similarity::rank(cands, tasks), captions, json);
    return kExitOk;
}

int cmd_caption(std::ostream& out, const std::vector<std::string>& inputs, const std::string& weights,
                const std::string& data, std::size_t beam, bool json) {
    captioner::CaptionModel model;
    if (!weights.empty()) {
        if (!fs::exists(weights)) throw DataError("cannot read " + weights);
        model = captioner::load_model(weights);
    } else {
        model = open_store(data, true)->latest_model();
    }
    captioner::DecodeOptions opts;
    opts.max_len = model.max_caption_length;
    if (beam > 1) {
        opts.mode = captioner::DecodeMode::kBeam;
        opts.beam_width = beam;
    }
    Json items = Json::array();
    for (const auto& in : inputs) {
        const auto g = captioner::generate(features_of(in, model), model.weights, opts);
        const auto tokens = text::decode(g.caption, model.vocab);
        if (json) {
            items.push_back({{"input", in},
                             {"caption", text::join(tokens)},
                             {"tokens", tokens},
                             {"log_prob", g.log_prob},
                             {"degenerate", g.degenerate}});
        } else {
            out << in << "\t" << text::join(tokens) << "\n";
        }
    }
    if (json) emit_json(out, {{"captions", std::move(items)}});
    return kExitOk;
}

int cmd_simulate(std::ostream& out, const std::string& scenario_path, std::optional<std::uint64_t> random_seed,
                 std::size_t random_images, bool equal_sizes, const std::string& policy_flag,
                 const std::string& weights, const std::string& csv_path, bool decisions, bool json) {
    downlink::Scenario sc;
    if (random_seed) {
        sc = downlink::random_scenario(*random_seed, random_images, equal_sizes);
    } else {
        std::optional<captioner::CaptionModel> model;
        downlink::PathCaptioner captioner = [&](const std::string& path) -> text::TokenList {
            if (!model) {
                if (weights.empty()) throw downlink::ScenarioError("scenario uses image paths; pass --weights");
                model = captioner::load_model(weights);
            }
            const auto g = captioner::generate(features_of(path, *model), model->weights);
            return text::decode(g.caption, model->vocab);
        };
        sc = downlink::parse_scenario(read_text(scenario_path), fs::path(scenario_path).parent_path().string(),
                                      captioner);
    }
    if (!policy_flag.empty()) {
        if (policy_flag == "both") sc.policy.reset();
        else sc.policy = downlink::policy_from_string(policy_flag);
    }
    const auto tasks = similarity::SearchTaskSet::from_texts(sc.tasks);
    downlink::SimOptions opts;
    opts.score = sc.score;
    opts.record_queues = decisions;
    if (sc.policy) {
        const auto r = downlink::run_simulation(sc.images, sc.schedule, *sc.policy, tasks, sc.seed, opts);
        if (!csv_path.empty()) {
            const auto csv = downlink::curve_csv(r);
            write_bytes(csv_path, {reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
        }
        if (json) {
            out << downlink::report_json(r, decisions) << "\n";
        } else {
            out << "policy\t" << downlink::to_string(r.policy) << "\n";
            out << "units_sent\t" << r.units_sent << "\n";
            out << "delivered\t" << r.completions.size() << "\n";
            out << "untransmitted\t" << r.untransmitted.size() << "\n";
            for (const auto& c : r.completions) out << c.completed_at << "\t" << c.id << "\t" << num(c.score) << "\n";
        }
        return kExitOk;
    }
    const auto pr = downlink::run_simulation(sc.images, sc.schedule, downlink::Policy::kPriority, tasks, sc.seed, opts);
    const auto fi = downlink::run_simulation(sc.images, sc.schedule, downlink::Policy::kFifo, tasks, sc.seed, opts);
    if (!csv_path.empty()) {
        const auto csv = downlink::comparison_csv(pr, fi);
        write_bytes(csv_path, {reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
    }
    if (json) {
        out << downlink::comparison_json(pr, fi, decisions) << "\n";
    } else {
        out << "units_sent\t" << pr.units_sent << "\t" << fi.units_sent << "\n";
        out << "delivered\t" << pr.completions.size() << "\t" << fi.completions.size() << "\n";
        out << "priority_dominates\t" << (downlink::dominates(pr, fi) ? "true" : "false") << "\n";
        out << downlink::comparison_csv(pr, fi);
    }
    return kExitOk;
}

int cmd_train(std::ostream& out, std::ostream& err, std::size_t synthetic, const std::string& data,
              const TrainFlags& f, const std::string& out_path, const std::string& csv_path, bool json) {
    const auto tcfg = f.config();
    std::vector<std::pair<captioner::FeatureMap, std::string>> pairs;
    captioner::EncoderConfig enc;
    std::optional<captioner::CaptionModel> previous;
    if (!data.empty()) {
        const auto store = open_store(data, true);
        previous = store->latest_model();
        enc = previous->encoder;
        for (const auto& e : store->images()) {
            const auto target = store->training_target(e.id);
            if (!target) continue;
            pairs.emplace_back(features_of(data / fs::path(e.file), *previous), target->caption);
        }
    } else {
        captioner::TinyEncoder encoder(enc);
        for (const auto& s : captioner::synthetic_shapes_corpus(synthetic, f.seed)) {
            pairs.emplace_back(encoder.encode(s.image), s.caption);
        }
    }
    std::vector<text::TokenList> tokens;
    for (const auto& [feat, cap] : pairs) tokens.push_back(text::tokenize(cap));
    const auto vocab = text::build_vocabulary(tokens);
    std::vector<captioner::TrainingSample> samples;
    for (std::size_t i = 0; i < pairs.size(); ++i) samples.push_back({pairs[i].first, text::encode(tokens[i], vocab)});

    captioner::ModelDims dims;
    dims.vocab = vocab.size();
    dims.embed = f.embed;
    dims.hidden = f.hidden;
    dims.attention = f.hidden;
    dims.feature = enc.feature_dim();
    dims.locations = enc.locations();
    const auto init = captioner::ModelWeights::random(dims, f.seed);
    const auto r = captioner::train(samples, vocab, init, tcfg, [&](const captioner::EpochMetrics& m) {
        if (!json) err << "epoch " << m.epoch << " loss " << num(m.train_loss) << "\n";
    });

    if (!out_path.empty()) {
        captioner::CaptionModel model;
        model.weights = r.weights;
        model.vocab = vocab;
        model.encoder = enc;
        model.max_caption_length = tcfg.max_caption_length;
        captioner::save_model(model, out_path);
    }
    std::ostringstream csv;
    captioner::write_history_csv(csv, r.history);
    if (!csv_path.empty()) {
        const auto s = csv.str();
        write_bytes(csv_path, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    }
    if (json) {
        Json history = Json::array();
        for (const auto& m : r.history) history.push_back(pipeline::to_json(m));
        emit_json(out, {{"samples", samples.size()},
                        {"train_size", r.train_size},
                        {"validation_size", r.validation_size},
                        {"removed_too_long", r.removed_too_long},
                        {"vocab_size", vocab.size()},
                        {"best_epoch", r.best_epoch},
                        {"history", std::move(history)}});
    } else {
        out << csv.str();
    }
    return kExitOk;
}

int cmd_export(std::ostream& out, const std::string& data, const std::string& what, const std::string& out_path,
               bool json) {
    const auto store = open_store(data, true);
    const auto bytes = what == "dataset" ? store->export_dataset() : store->export_weights();
    write_bytes(out_path, bytes);
    if (json) {
        emit_json(out, {{"kind", what}, {"path", out_path}, {"bytes", bytes.size()},
                        {"sha256", archive::sha256_hex(bytes)}});
    } else {
        out << out_path << "\t" << bytes.size() << "\t" << archive::sha256_hex(bytes) << "\n";
    }
    return kExitOk;
}

int cmd_import(std::ostream& out, const std::string& data, const std::string& dataset, const std::string& weights,
               bool json) {
    Json body;
    if (!dataset.empty()) {
        const auto bytes = read_bytes(dataset);
        if (fs::exists(data / fs::path("state.json")) || fs::exists(data / fs::path("journal.jsonl"))) {
            throw DataError("dataset import needs an empty data directory");
        }
        pipeline::Pipeline::import_dataset(data, bytes);
        body["images"] = open_store(data, false)->images().size();
    }
    if (!weights.empty()) {
        const auto store = open_store(data, false);
        body["checkpoint"] = pipeline::to_json(store->import_weights(read_bytes(weights)));
    }
    if (json) {
        emit_json(out, std::move(body));
    } else {
        if (body.contains("images")) out << "images\t" << body["images"].get<std::size_t>() << "\n";
        if (body.contains("checkpoint")) out << "checkpoint\t" << body["checkpoint"]["file"].get<std::string>() << "\n";
    }
    return kExitOk;
}

int cmd_retrain(std::ostream& out, const std::string& data, const TrainFlags& f, bool cold, bool json) {
    pipeline::PipelineConfig cfg;
    cfg.train = f.config();
    cfg.warm_start = !cold;
    const auto store = open_store(data, true, cfg);
    const auto job = store->start_retrain("cli");
    if (job.state == pipeline::JobState::kFailed) throw DataError("retrain failed: " + job.error);
    if (json) {
        emit_json(out, {{"job", pipeline::to_json(job)}, {"checkpoint", pipeline::to_json(store->checkpoints().back())}});
    } else {
        out << "checkpoint\t" << store->checkpoints().back().file << "\t" << store->checkpoints().back().kind << "\n";
    }
    return kExitOk;
}

service::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(std::ostream& out, const std::string& config, std::optional<int> port, const std::string& data,
              const std::string& tokens, bool json) {
    auto cfg = service::load_config(config.empty() ? std::nullopt : std::optional<fs::path>(config));
    if (port) cfg.port = *port;
    if (!data.empty()) cfg.data_dir = data;
    if (!tokens.empty()) cfg.tokens_path = tokens;
    if (cfg.tokens_path.empty()) throw DataError("a token table is required (--tokens, config or SPASS_TOKENS)");
    auto table = service::load_tokens(cfg.tokens_path);
    std::optional<captioner::CaptionModel> initial;
    if (!cfg.initial_weights.empty() && !fs::exists(cfg.data_dir / "state.json")) {
        initial = captioner::load_model(cfg.initial_weights);
    }
    pipeline::Pipeline store(cfg.data_dir, cfg.pipeline, pipeline::default_model_fit, std::move(initial));
    service::Api api(store, std::move(table), cfg);
    std::ofstream log_file;
    if (!cfg.log_path.empty()) {
        log_file.open(cfg.log_path, std::ios::app);
        if (!log_file) throw DataError("cannot open log " + cfg.log_path.string());
    }
    service::RequestLog log(cfg.log_path.empty() ? std::cerr : log_file);
    service::Server server(api, cfg, log);
    if (json) {
        emit_json(out, {{"host", cfg.host}, {"port", cfg.port}, {"data_dir", cfg.data_dir.string()}});
    } else {
        out << "listening on " << cfg.host << ":" << cfg.port << "\n";
    }
    out.flush();
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const bool ok = server.listen();
    g_server = nullptr;
    store.wait_idle();
    if (!ok) throw DataError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Caption-driven image triage: scoring, ranking, downlink simulation and retraining.", "spass"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for all subcommands");
    bool json = false;

    // score
    auto* score = app.add_subcommand("score", "score a caption against search tasks");
    std::string caption;
    std::vector<std::string> task_files, task_texts;
    int uniform = 0;
    score->add_option("--caption", caption, "caption text")->required();
    score->add_option("--tasks", task_files, "file with one search task per line");
    score->add_option("--task", task_texts, "search task text (repeatable)");
    score->add_option("--uniform", uniform, "use BLEU-n with uniform weights instead of the search weights")
        ->check(CLI::Range(1, 8));
    score->add_flag("--json", json, "machine-readable output");

    // rank
    auto* rank = app.add_subcommand("rank", "rank images by relevance to search tasks");
    std::string data, task_set, captions_file;
    auto* rank_data = rank->add_option("--data", data, "data directory");
    rank->add_option("--task-set", task_set, "stored task set id")->needs(rank_data);
    auto* rank_caps = rank->add_option("--captions", captions_file, "id<TAB>caption file")->excludes(rank_data);
    rank->add_option("--tasks", task_files, "file with one search task per line");
    rank->add_option("--task", task_texts, "search task text (repeatable)");
    rank->add_flag("--json", json, "machine-readable output");
    (void)rank_caps;

    // caption
    auto* cap = app.add_subcommand("caption", "caption images or feature files");
    std::vector<std::string> inputs;
    std::string weights;
    std::size_t beam = 1;
    cap->add_option("inputs", inputs, "PNG, PPM or feature files")->required();
    auto* cap_w = cap->add_option("--weights", weights, "model file");
    auto* cap_d = cap->add_option("--data", data, "use the latest checkpoint of a data directory");
    cap_w->excludes(cap_d);
    cap->add_option("--beam", beam, "beam width (1 = greedy)")->check(CLI::Range(1, 64));
    cap->add_flag("--json", json, "machine-readable output");

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate prioritized downlink transmission");
    std::string scenario, policy, csv_path;
    std::optional<std::uint64_t> random_seed;
    std::size_t random_images = 20;
    bool equal_sizes = false, decisions = false;
    auto* sim_file = sim->add_option("--scenario", scenario, "scenario JSON");
    auto* sim_rand = sim->add_option("--random", random_seed, "generate a seeded random scenario");
    sim_file->excludes(sim_rand);
    sim->add_option("--images", random_images, "images in a random scenario")->needs(sim_rand);
    sim->add_flag("--equal-sizes", equal_sizes, "random scenario with equal image sizes")->needs(sim_rand);
    sim->add_option("--policy", policy, "priority, fifo or both")->check(CLI::IsMember({"priority", "fifo", "both"}));
    sim->add_option("--weights", weights, "model for scenarios that reference images");
    sim->add_option("--csv", csv_path, "write the delivered-relevance curve as CSV");
    sim->add_flag("--decisions", decisions, "include per-decision queue snapshots");
    sim->add_flag("--json", json, "machine-readable output");

    // train
    auto* train = app.add_subcommand("train", "train a captioner and print the BLEU learning curve as CSV");
    std::size_t synthetic = 0;
    std::string out_path;
    TrainFlags tf;
    auto* tr_syn = train->add_option("--synthetic", synthetic, "train on N synthetic shape scenes")
                       ->check(CLI::Range(2, 64));
    auto* tr_data = train->add_option("--data", data, "train on the reviewed captions of a data directory");
    tr_syn->excludes(tr_data);
    train->add_option("--out", out_path, "write the best model here");
    train->add_option("--csv", csv_path, "also write the CSV to a file");
    tf.add(train);
    train->add_flag("--json", json, "machine-readable output");

    // retrain
    auto* retrain = app.add_subcommand("retrain", "run one retraining cycle on a data directory");
    bool cold = false;
    retrain->add_option("--data", data, "data directory")->required();
    retrain->add_flag("--cold", cold, "start from fresh weights instead of the latest checkpoint");
    TrainFlags rf;
    rf.add(retrain);
    retrain->add_flag("--json", json, "machine-readable output");

    // export
    auto* exp = app.add_subcommand("export", "export the dataset or latest weights as a tar archive");
    std::string what;
    exp->add_option("--data", data, "data directory")->required();
    exp->add_option("what", what, "dataset or weights")->required()->check(CLI::IsMember({"dataset", "weights"}));
    exp->add_option("--out", out_path, "archive path")->required();
    exp->add_flag("--json", json, "machine-readable output");

    // import
    auto* imp = app.add_subcommand("import", "import a dataset or weights archive");
    std::string dataset_archive, weights_archive;
    imp->add_option("--data", data, "data directory")->required();
    auto* imp_ds = imp->add_option("--dataset", dataset_archive, "dataset archive");
    auto* imp_w = imp->add_option("--weights", weights_archive, "weights archive");
    imp->add_flag("--json", json, "machine-readable output");

    // serve
    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    std::string config, tokens;
    std::optional<int> port;
    serve->add_option("--config", config, "JSON config file");
    serve->add_option("--port", port, "listen port")->check(CLI::Range(0, 65535));
    serve->add_option("--data", data, "data directory");
    serve->add_option("--tokens", tokens, "token table");
    serve->add_flag("--json", json, "machine-readable output");

    std::vector<const char*> argv{"spass"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (rank->parsed() && data.empty() && captions_file.empty()) {
            throw CLI::ValidationError("rank", "one of --data or --captions is required");
        }
        if (rank->parsed() && task_set.empty() && task_files.empty() && task_texts.empty()) {
            throw CLI::ValidationError("rank", "give --task-set, --tasks or --task");
        }
        if (score->parsed() && task_files.empty() && task_texts.empty()) {
            throw CLI::ValidationError("score", "give --tasks or --task");
        }
        if (cap->parsed() && weights.empty() && data.empty()) {
            throw CLI::ValidationError("caption", "give --weights or --data");
        }
        if (sim->parsed() && scenario.empty() && !random_seed) {
            throw CLI::ValidationError("simulate", "give --scenario or --random");
        }
        if (train->parsed() && synthetic == 0 && data.empty()) {
            throw CLI::ValidationError("train", "give --synthetic or --data");
        }
        if (imp->parsed() && imp_ds->count() == 0 && imp_w->count() == 0) {
            throw CLI::ValidationError("import", "give --dataset and/or --weights");
        }
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    try {
        if (score->parsed()) return cmd_score(out, caption, task_files, task_texts, uniform, json);
        if (rank->parsed()) return cmd_rank(out, data, task_set, captions_file, task_files, task_texts, json);
        if (cap->parsed()) return cmd_caption(out, inputs, weights, data, beam, json);
        if (sim->parsed()) {
            return cmd_simulate(out, scenario, random_seed, random_images, equal_sizes, policy, weights, csv_path,
                                decisions, json);
        }
        if (train->parsed()) return cmd_train(out, err, synthetic, data, tf, out_path, csv_path, json);
        if (retrain->parsed()) return cmd_retrain(out, data, rf, cold, json);
        if (exp->parsed()) return cmd_export(out, data, what, out_path, json);
        if (imp->parsed()) return cmd_import(out, data, dataset_archive, weights_archive, json);
        if (serve->parsed()) return cmd_serve(out, config, port, data, tokens, json);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace spass::cli
