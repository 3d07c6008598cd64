#pragma once

// Unit-at-a-time reference simulator: walks every tick of every window and
// sends one unit at a time, choosing a new image whenever the link is idle.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

struct Job {
    std::string id;
    std::int64_t arrival;
    std::int64_t size;
    double score;
};

struct Win {
    std::int64_t start, duration, bandwidth;
};

struct Done {
    std::string id;
    std::int64_t started_at;
    std::int64_t completed_at;
};

inline std::vector<Done> simulate(std::vector<Job> jobs, const std::vector<Win>& windows, bool priority) {
    std::vector<bool> taken(jobs.size(), false);
    std::vector<Done> out;
    int cur = -1;
    std::int64_t left = 0, started = 0;
    for (const auto& w : windows) {
        for (std::int64_t t = w.start; t < w.start + w.duration; ++t) {
            for (std::int64_t u = 0; u < w.bandwidth; ++u) {
                if (cur < 0) {
                    for (std::size_t i = 0; i < jobs.size(); ++i) {
                        if (taken[i] || jobs[i].arrival > t) continue;
                        if (cur < 0) {
                            cur = static_cast<int>(i);
                            continue;
                        }
                        const auto& a = jobs[i];
                        const auto& b = jobs[static_cast<std::size_t>(cur)];
                        bool better;
                        if (priority && a.score != b.score) better = a.score > b.score;
                        else if (a.arrival != b.arrival) better = a.arrival < b.arrival;
                        else better = a.id < b.id;
                        if (better) cur = static_cast<int>(i);
                    }
                    if (cur < 0) break;
                    taken[static_cast<std::size_t>(cur)] = true;
                    left = jobs[static_cast<std::size_t>(cur)].size;
                    started = t;
                }
                if (--left == 0) {
                    out.push_back({jobs[static_cast<std::size_t>(cur)].id, started, t + 1});
                    cur = -1;
                }
            }
        }
    }
    return out;
}

}  // namespace oracle
