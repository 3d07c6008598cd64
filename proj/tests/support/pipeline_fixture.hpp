#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "spass/captioner/serialize.hpp"
#include "spass/pipeline.hpp"
#include "spass/tensor.hpp"
#include "../oracles/trigger_oracle.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path fresh_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("spass_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

inline spass::pipeline::PipelineConfig small_config() {
    spass::pipeline::PipelineConfig cfg;
    cfg.dims.embed = 8;
    cfg.dims.hidden = 16;
    cfg.dims.attention = 8;
    cfg.clock = [] { return std::string("2024-01-01T00:00:00Z"); };
    return cfg;
}

// A feature file matching the default encoder shape (16 x 32).
inline std::vector<std::uint8_t> feature_upload(std::uint64_t seed) {
    spass::Rng rng(seed);
    spass::captioner::FeatureMap f{spass::Matrix(16, 32)};
    for (double& x : f.annotations.data) x = rng.uniform(-1.0, 1.0);
    return spass::captioner::write_features(f);
}

// Returns a copy of the previous model and counts calls.
struct StubFit {
    std::shared_ptr<std::atomic<int>> calls = std::make_shared<std::atomic<int>>(0);
    std::shared_ptr<std::vector<std::size_t>> sample_counts = std::make_shared<std::vector<std::size_t>>();

    spass::pipeline::FitResult operator()(const spass::pipeline::FitRequest& req) const {
        ++*calls;
        sample_counts->push_back(req.samples.size());
        return {req.previous, "fit", 1, {}};
    }
};

// Drives a pipeline through the events; returns whether each one produced a
// new checkpoint.
inline std::vector<bool> drive(spass::pipeline::Pipeline& p, const std::vector<oracle::Event>& events,
                               std::uint64_t seed) {
    static const std::vector<std::string> captions{"dark layered rock with bright veins", "smooth dune field",
                                                   "crater rim with boulders", "bright polar ice cap edge"};
    std::vector<std::string> ids;
    std::vector<bool> fired;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto before = p.checkpoints().size();
        const auto& e = events[i];
        switch (e.kind) {
            case oracle::EventKind::kIngest:
                ids.push_back(p.ingest(feature_upload(seed * 100000 + i), "tester", true).image.id);
                break;
            case oracle::EventKind::kReview:
                p.submit_review(ids.at(e.image), captions[i % captions.size()], "rev" + std::to_string(i % 3));
                break;
            case oracle::EventKind::kVote: {
                const auto anns = p.annotations(ids.at(e.image));
                p.vote(anns[i % anns.size()].id, "voter" + std::to_string(i));
                break;
            }
        }
        fired.push_back(p.checkpoints().size() != before);
    }
    return fired;
}

}  // namespace fixture
