#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lwf/chains.hpp"
#include "lwf/flights.hpp"
#include "lwf/lambda_measure.hpp"
#include "lwf/parallel.hpp"
#include "lwf/rng.hpp"

namespace lwf {

enum class asg_kind : uint8_t { merger, star, cross, circle };

// One recorded transition of the ordered ancestral graph. Levels are in the
// coordinates of the layer on the near (smaller-u) side of the event.
struct asg_event {
    double u = 0.0;
    asg_kind kind = asg_kind::star;
    long level = 0;             // star insertion / mutation mark level
    std::vector<long> levels;   // merger participants, sorted, size >= 2
    long born_id = 0;           // star: id of the incoming line
    long parent_id = 0;         // merger: id of the line at levels.front()
};

// Ordered ancestral graph grown backward from a single line, mutation marks
// included, nothing pruned. Line ids are stable; the far layer is the state
// at the end of the record.
struct asg_realization {
    std::vector<asg_event> events;  // increasing u
    std::vector<long> far_ids;
    double u_end = 0.0;
    bool budget_exhausted = false;
};

// One JSON line per event plus a trailer with the far-end line ids, for
// reproducing failures offline.
inline std::string dump_json(const asg_realization& real) {
    static const char* names[] = {"merger", "star", "cross", "circle"};
    std::string out;
    for (const auto& ev : real.events) {
        nlohmann::json j;
        j["u"] = ev.u;
        j["kind"] = names[size_t(ev.kind)];
        if (ev.kind == asg_kind::merger) {
            j["levels"] = ev.levels;
            j["parent_id"] = ev.parent_id;
        } else {
            j["level"] = ev.level;
            if (ev.kind == asg_kind::star) j["born_id"] = ev.born_id;
        }
        out += j.dump();
        out += '\n';
    }
    nlohmann::json tail;
    tail["far_ids"] = real.far_ids;
    tail["u_end"] = real.u_end;
    out += tail.dump();
    out += '\n';
    return out;
}

inline asg_realization build_unpruned(const model_params& p, double u_max,
                                      long budget, rng_stream& rng) {
    asg_realization out;
    rate_table table(p.lambda);
    std::vector<long> layer{1};
    long next_id = 2;
    double u = 0.0;
    std::vector<double> w;
    while (long(out.events.size()) < budget) {
        const long b = long(layer.size());
        const double star = double(b) * p.sigma;
        const double cross = double(b) * p.theta * p.nu1;
        const double circle = double(b) * p.theta * p.nu0;
        w.assign(size_t(b) + 2, 0.0);
        w[0] = star;
        w[1] = cross;
        w[2] = circle;
        double total = star + cross + circle;
        for (long j = 2; j <= b; ++j) {
            const double r = std::exp(log_choose(double(b), double(j))) * table.rate(b, j);
            w[size_t(j) + 1] = r;
            total += r;
        }
        if (total <= 0.0) {
            u = std::isfinite(u_max) ? u_max : u;
            break;
        }
        u += rng.exponential(total);
        if (u >= u_max) {
            u = u_max;
            break;
        }
        const size_t pick = rng.categorical(w, total);
        asg_event ev;
        ev.u = u;
        if (pick == 0) {
            ev.kind = asg_kind::star;
            ev.level = 1 + long(rng.below(uint64_t(b)));
            ev.born_id = next_id++;
            layer.insert(layer.begin() + (ev.level - 1), ev.born_id);
        } else if (pick == 1 || pick == 2) {
            ev.kind = pick == 1 ? asg_kind::cross : asg_kind::circle;
            ev.level = 1 + long(rng.below(uint64_t(b)));
        } else {
            const long j = long(pick) - 1;
            ev.kind = asg_kind::merger;
            ev.levels = detail::uniform_subset(rng, 1, b, j);
            ev.parent_id = layer[size_t(ev.levels.front() - 1)];
            for (long m = j - 1; m >= 1; --m)
                layer.erase(layer.begin() + (ev.levels[size_t(m)] - 1));
        }
        out.events.push_back(std::move(ev));
    }
    out.budget_exhausted = long(out.events.size()) >= budget;
    out.u_end = out.budget_exhausted ? out.events.back().u : u;
    out.far_ids = layer;
    return out;
}

// The graph after mutation pruning, in its own contiguous coordinates.
// Deleterious marks kill their line (the immune line is relocated to the
// top instead), beneficial marks kill everything above. Each surviving
// level references the ancestral line it rides on.
struct pruned_event {
    double u = 0.0;
    asg_kind kind = asg_kind::star;
    bool immune_cross = false;
    long level = 0;
    std::vector<long> levels;
    long near_count = 0;  // line count before the event (smaller u side)
    long far_count = 0;   // line count after
};

struct pruned_state {
    long count = 1;
    long immune = 1;  // 1-based level of the immune line
};

// The five transition rules on bare (count, immune) state. Out-of-range
// elements are no-ops.
inline pruned_state step_pruned(pruned_state s, const pruned_event& e) {
    switch (e.kind) {
        case asg_kind::merger: {
            std::vector<long> in;
            for (long v : e.levels)
                if (v <= s.count) in.push_back(v);
            if (in.size() < 2) return s;
            const long low = in.front();
            long shift = 0;
            bool member = false;
            for (long v : in) {
                if (v == s.immune) member = true;
                if (v != low && v < s.immune) ++shift;
            }
            s.count -= long(in.size()) - 1;
            s.immune = member ? low : s.immune - shift;
            break;
        }
        case asg_kind::star:
            if (e.level <= s.count) {
                ++s.count;
                if (s.immune >= e.level) ++s.immune;
            }
            break;
        case asg_kind::cross:
            if (e.level <= s.count) {
                if (e.level == s.immune) {
                    s.immune = s.count;  // relocate to the top, count unchanged
                } else {
                    if (s.immune > e.level) --s.immune;
                    --s.count;
                }
            }
            break;
        case asg_kind::circle:
            if (e.level <= s.count) {
                s.count = e.level;
                s.immune = e.level;
            }
            break;
    }
    return s;
}

struct pruned_result {
    std::vector<pruned_event> events;
    std::vector<long> refs;  // far-end levels -> ancestral line ids
    long immune = 1;
};

// Replays an unpruned record applying the pruning rules. Mergers redirect
// every surviving reference onto the parent line; duplicate references then
// collapse to the lowest level, which is exactly the induced merger on
// pruned coordinates.
inline pruned_result prune(const asg_realization& real) {
    pruned_result out;
    std::vector<long> layer{1};
    std::vector<long> refs{1};
    long immune = 0;  // 0-based here
    const auto find_ref = [&](long id) -> long {
        for (size_t i = 0; i < refs.size(); ++i)
            if (refs[i] == id) return long(i);
        return -1;
    };
    for (const auto& ev : real.events) {
        pruned_event induced;
        induced.u = ev.u;
        induced.kind = ev.kind;
        induced.near_count = long(refs.size());
        switch (ev.kind) {
            case asg_kind::merger: {
                std::vector<long> pids;
                for (long v : ev.levels) pids.push_back(layer[size_t(v - 1)]);
                for (long m = long(ev.levels.size()) - 1; m >= 1; --m)
                    layer.erase(layer.begin() + (ev.levels[size_t(m)] - 1));
                std::vector<long> hit;
                for (size_t i = 0; i < refs.size(); ++i)
                    if (std::find(pids.begin(), pids.end(), refs[i]) != pids.end()) {
                        refs[i] = ev.parent_id;
                        hit.push_back(long(i));
                    }
                if (hit.size() >= 2) {
                    const long keep = hit.front();
                    bool immune_in = false;
                    long shift = 0;
                    for (long i : hit) {
                        if (i == immune) immune_in = true;
                        if (i != keep && i < immune) ++shift;
                    }
                    for (long m = long(hit.size()) - 1; m >= 1; --m)
                        refs.erase(refs.begin() + hit[size_t(m)]);
                    immune = immune_in ? keep : immune - shift;
                    for (long i : hit) induced.levels.push_back(i + 1);
                }
                break;
            }
            case asg_kind::star: {
                const long cont = layer[size_t(ev.level - 1)];
                layer.insert(layer.begin() + (ev.level - 1), ev.born_id);
                const long pos = find_ref(cont);
                if (pos >= 0) {
                    refs.insert(refs.begin() + pos, ev.born_id);
                    if (immune >= pos) ++immune;
                    induced.level = pos + 1;
                }
                break;
            }
            case asg_kind::cross: {
                const long pos = find_ref(layer[size_t(ev.level - 1)]);
                if (pos >= 0) {
                    induced.level = pos + 1;
                    if (pos == immune) {
                        const long id = refs[size_t(pos)];
                        refs.erase(refs.begin() + pos);
                        refs.push_back(id);
                        immune = long(refs.size()) - 1;
                        induced.immune_cross = true;
                    } else {
                        refs.erase(refs.begin() + pos);
                        if (immune > pos) --immune;
                    }
                }
                break;
            }
            case asg_kind::circle: {
                const long pos = find_ref(layer[size_t(ev.level - 1)]);
                if (pos >= 0) {
                    refs.resize(size_t(pos) + 1);
                    immune = pos;
                    induced.level = pos + 1;
                }
                break;
            }
        }
        induced.far_count = long(refs.size());
        const bool effective =
            induced.far_count != induced.near_count ||
            (ev.kind == asg_kind::merger && induced.levels.size() >= 2) ||
            (ev.kind == asg_kind::cross && induced.immune_cross) ||
            (ev.kind == asg_kind::circle && induced.level > 0);
        if (effective) out.events.push_back(std::move(induced));
    }
    out.refs = refs;
    out.immune = immune + 1;
    return out;
}

// Markov generation of the pruned graph directly in its own coordinates.
struct pruned_sim {
    std::vector<pruned_event> events;
    pruned_state final_state;
    double u_end = 0.0;
    bool budget_exhausted = false;
};

inline pruned_sim simulate_pruned_until(const model_params& p, double u_max,
                                        long budget, rng_stream& rng) {
    pruned_sim out;
    rate_table table(p.lambda);
    pruned_state st;
    double u = 0.0;
    std::vector<double> w;
    while (long(out.events.size()) < budget) {
        const long b = st.count;
        w.assign(size_t(b) + 2, 0.0);
        w[0] = double(b) * p.sigma;
        w[1] = double(b) * p.theta * p.nu1;
        w[2] = double(b) * p.theta * p.nu0;
        double total = w[0] + w[1] + w[2];
        for (long j = 2; j <= b; ++j) {
            const double r = std::exp(log_choose(double(b), double(j))) * table.rate(b, j);
            w[size_t(j) + 1] = r;
            total += r;
        }
        if (total <= 0.0) {
            u = std::isfinite(u_max) ? u_max : u;
            break;
        }
        u += rng.exponential(total);
        if (u >= u_max) {
            u = u_max;
            break;
        }
        const size_t pick = rng.categorical(w, total);
        pruned_event ev;
        ev.u = u;
        ev.near_count = st.count;
        if (pick == 0) {
            ev.kind = asg_kind::star;
            ev.level = 1 + long(rng.below(uint64_t(b)));
        } else if (pick == 1 || pick == 2) {
            ev.kind = pick == 1 ? asg_kind::cross : asg_kind::circle;
            ev.level = 1 + long(rng.below(uint64_t(b)));
            if (ev.kind == asg_kind::cross && ev.level == st.immune)
                ev.immune_cross = true;
        } else {
            ev.kind = asg_kind::merger;
            ev.levels = detail::uniform_subset(rng, 1, b, long(pick) - 1);
        }
        st = step_pruned(st, ev);
        ev.far_count = st.count;
        out.events.push_back(std::move(ev));
    }
    out.budget_exhausted = long(out.events.size()) >= budget;
    out.u_end = out.budget_exhausted ? out.events.back().u : u;
    out.final_state = st;
    return out;
}

// Forward type resolution. Types are assigned on the far layer; marks
// overwrite, merged lines inherit the parent, and at a branching the
// incoming line is parental exactly when it carries the beneficial type.
struct resolved {
    int type = 0;
    long ancestor = 0;  // far-layer line id; 0 means a line born mid-graph
};

namespace detail {

struct resolve_cell {
    long anc = 0;
    int type = 1;
};

}  // namespace detail

inline resolved resolve_unpruned(const asg_realization& real,
                                 const std::map<long, int>& far_types) {
    std::vector<detail::resolve_cell> layer;
    for (long id : real.far_ids) {
        const auto it = far_types.find(id);
        if (it == far_types.end()) throw std::invalid_argument("missing far type");
        layer.push_back({id, it->second});
    }
    std::vector<detail::resolve_cell> next;
    for (auto it = real.events.rbegin(); it != real.events.rend(); ++it) {
        const auto& ev = *it;
        switch (ev.kind) {
            case asg_kind::merger: {
                const long near_n = long(layer.size()) + long(ev.levels.size()) - 1;
                next.assign(size_t(near_n), {});
                const auto parent = layer[size_t(ev.levels.front() - 1)];
                size_t drop = 0;
                for (long k = 1; k <= near_n; ++k) {
                    if (std::binary_search(ev.levels.begin(), ev.levels.end(), k)) {
                        next[size_t(k - 1)] = parent;
                        if (k != ev.levels.front()) ++drop;
                    } else {
                        next[size_t(k - 1)] = layer[size_t(k - 1 - long(drop))];
                    }
                }
                layer.swap(next);
                break;
            }
            case asg_kind::star: {
                const long i = ev.level;
                const long near_n = long(layer.size()) - 1;
                next.assign(size_t(near_n), {});
                for (long k = 1; k < i; ++k) next[size_t(k - 1)] = layer[size_t(k - 1)];
                next[size_t(i - 1)] =
                    layer[size_t(i - 1)].type == 0 ? layer[size_t(i - 1)] : layer[size_t(i)];
                for (long k = i + 1; k <= near_n; ++k)
                    next[size_t(k - 1)] = layer[size_t(k)];
                layer.swap(next);
                break;
            }
            case asg_kind::cross: layer[size_t(ev.level - 1)].type = 1; break;
            case asg_kind::circle: layer[size_t(ev.level - 1)].type = 0; break;
        }
    }
    if (layer.size() != 1) throw std::logic_error("resolution did not close");
    return {layer[0].type, layer[0].anc};
}

// Same resolution through the pruned record. Lines killed by pruning are
// reintroduced forward in time as fresh sources: a cross births a
// deleterious-type line, a circle births everything above its level. These
// conventions are validated against the unpruned oracle, not trusted.
inline resolved resolve_pruned(const pruned_result& pres,
                               const std::vector<int>& far_types) {
    if (far_types.size() != pres.refs.size())
        throw std::invalid_argument("type count mismatch");
    std::vector<detail::resolve_cell> layer;
    for (size_t i = 0; i < pres.refs.size(); ++i)
        layer.push_back({pres.refs[i], far_types[i]});
    std::vector<detail::resolve_cell> next;
    for (auto it = pres.events.rbegin(); it != pres.events.rend(); ++it) {
        const auto& ev = *it;
        if (long(layer.size()) != ev.far_count)
            throw std::logic_error("pruned layer size drift");
        switch (ev.kind) {
            case asg_kind::merger: {
                next.assign(size_t(ev.near_count), {});
                const auto parent = layer[size_t(ev.levels.front() - 1)];
                size_t drop = 0;
                for (long k = 1; k <= ev.near_count; ++k) {
                    if (std::binary_search(ev.levels.begin(), ev.levels.end(), k)) {
                        next[size_t(k - 1)] = parent;
                        if (k != ev.levels.front()) ++drop;
                    } else {
                        next[size_t(k - 1)] = layer[size_t(k - 1 - long(drop))];
                    }
                }
                layer.swap(next);
                break;
            }
            case asg_kind::star: {
                const long i = ev.level;
                next.assign(size_t(ev.near_count), {});
                for (long k = 1; k < i; ++k) next[size_t(k - 1)] = layer[size_t(k - 1)];
                next[size_t(i - 1)] =
                    layer[size_t(i - 1)].type == 0 ? layer[size_t(i - 1)] : layer[size_t(i)];
                for (long k = i + 1; k <= ev.near_count; ++k)
                    next[size_t(k - 1)] = layer[size_t(k)];
                layer.swap(next);
                break;
            }
            case asg_kind::cross: {
                const long i = ev.level;
                if (ev.immune_cross) {
                    next.assign(size_t(ev.near_count), {});
                    for (long k = 1; k < i; ++k) next[size_t(k - 1)] = layer[size_t(k - 1)];
                    next[size_t(i - 1)] = layer.back();
                    next[size_t(i - 1)].type = 1;
                    for (long k = i + 1; k <= ev.near_count; ++k)
                        next[size_t(k - 1)] = layer[size_t(k - 2)];
                    layer.swap(next);
                } else {
                    layer.insert(layer.begin() + (i - 1), {0, 1});
                }
                break;
            }
            case asg_kind::circle: {
                layer[size_t(ev.level - 1)].type = 0;
                while (long(layer.size()) < ev.near_count) layer.push_back({0, 1});
                break;
            }
        }
    }
    if (layer.size() != 1) throw std::logic_error("pruned resolution did not close");
    return {layer[0].type, layer[0].anc};
}

struct prop1_report {
    long realizations = 0;
    long assignments = 0;
    long mismatches = 0;
    long skipped = 0;           // draws whose pruned layer exceeded the cap
    std::string first_failure;  // realization dump + assignment of the first mismatch
};

// Exhaustive check of the immortal-line rule: for every type assignment to
// the pruned far layer, the resolved ancestor is the lowest beneficial
// level, or the immune line when no level is beneficial; the unpruned
// resolution must agree for arbitrary types on the pruned-away lines.
inline prop1_report verify_prop1(const model_params& p, long realizations,
                                 long budget, long cap, uint64_t seed, int threads) {
    struct slot {
        long assignments = 0;
        long mismatches = 0;
        long skipped = 0;
        std::string failure;
    };
    std::vector<slot> slots;
    slots.resize(size_t(realizations));
    parallel_for(0, realizations, threads, [&](long r) {
        auto& sl = slots[size_t(r)];
        const auto record_failure = [&](const asg_realization& real, long mask,
                                        const char* via) {
            if (!sl.failure.empty()) return;
            nlohmann::json head;
            head["assignment_mask"] = mask;
            head["path"] = via;
            sl.failure = head.dump() + "\n" + dump_json(real);
        };
        for (long attempt = 0;; ++attempt) {
            if (attempt >= 64)
                throw std::runtime_error("no realization fits under the cap");
            rng_stream rng(seed, 0xA5600000ull + uint64_t(attempt), uint64_t(r));
            auto real = build_unpruned(p, std::numeric_limits<double>::infinity(),
                                       budget, rng);
            auto pres = prune(real);
            const long L = long(pres.refs.size());
            if (L > cap) {
                ++sl.skipped;
                continue;
            }
            std::vector<long> loose;
            for (long id : real.far_ids)
                if (std::find(pres.refs.begin(), pres.refs.end(), id) == pres.refs.end())
                    loose.push_back(id);
            for (long mask = 0; mask < (1L << L); ++mask) {
                std::vector<int> tau(size_t(L), 1);
                long lowest0 = 0;
                for (long m = L - 1; m >= 0; --m)
                    if (mask & (1L << m)) {
                        tau[size_t(m)] = 0;
                        lowest0 = m + 1;
                    }
                const long want = lowest0 > 0 ? pres.refs[size_t(lowest0 - 1)]
                                              : pres.refs[size_t(pres.immune - 1)];
                const auto pr = resolve_pruned(pres, tau);
                ++sl.assignments;
                if (pr.ancestor != want) {
                    ++sl.mismatches;
                    record_failure(real, mask, "pruned");
                }
                for (int fill = 0; fill < 4; ++fill) {
                    std::map<long, int> far;
                    for (size_t i = 0; i < pres.refs.size(); ++i)
                        far[pres.refs[i]] = tau[i];
                    for (size_t i = 0; i < loose.size(); ++i) {
                        int t = 1;
                        if (fill == 0) t = 0;
                        if (fill == 2) t = int(i % 2);
                        if (fill == 3)
                            t = hash_bernoulli(seed, uint64_t(r), 977u + i, 0.5) ? 1 : 0;
                        far[loose[i]] = t;
                    }
                    const auto ur = resolve_unpruned(real, far);
                    ++sl.assignments;
                    if (ur.ancestor != want) {
                        ++sl.mismatches;
                        record_failure(real, mask, "unpruned");
                    }
                }
            }
            break;
        }
    });
    prop1_report rep;
    rep.realizations = realizations;
    for (const auto& sl : slots) {
        rep.assignments += sl.assignments;
        rep.mismatches += sl.mismatches;
        rep.skipped += sl.skipped;
        if (rep.first_failure.empty() && !sl.failure.empty())
            rep.first_failure = sl.failure;
    }
    return rep;
}

struct h_graph_row {
    double x = 0.0;
    double value = 0.0;
    double se = 0.0;
};

// Ancestral-type curve by graph simulation: the immortal line is
// beneficial exactly when not every far-layer line is deleterious, so the
// curve is the equilibrium average of 1 - (1-x)^count, estimated by
// renewal-reward over excursions of the pruned line count.
inline std::vector<h_graph_row> h_by_graph(const model_params& p,
                                           const std::vector<double>& xs,
                                           long cycles, uint64_t seed, int threads) {
    std::vector<h_graph_row> out;
    if (p.sigma <= 0.0) {
        for (double x : xs) out.push_back({x, x, 0.0});
        return out;
    }
    if (cycles < 200) throw std::invalid_argument("need at least 200 cycles");
    chain_system sys(p, chain_kind::l);
    const size_t m = xs.size();
    std::vector<double> occ(size_t(cycles) * m, 0.0);
    std::vector<double> len(size_t(cycles), 0.0);
    parallel_for(0, cycles, threads, [&](long i) {
        rng_stream rng(seed, 0x46AB0000ull + 2, uint64_t(i));
        const jump_table& at1 = sys.at(1);
        double cycle = rng.exponential(at1.total);
        double* row = &occ[size_t(i) * m];
        for (size_t q = 0; q < m; ++q) row[q] += cycle * xs[q];  // count 1 layer
        const auto st =
            run_chain(sys, 2, 1, std::numeric_limits<double>::infinity(), 10000000L,
                      1000000000L, rng, [&](long s, double dt) {
                          cycle += dt;
                          for (size_t q = 0; q < m; ++q)
                              row[q] += dt * (1.0 - std::pow(1.0 - xs[q], double(s)));
                      });
        if (st.end != path_end::hit)
            throw std::runtime_error("pruned excursion exceeded bounds");
        len[size_t(i)] = cycle;
    });
    std::vector<double> num(size_t(cycles), 0.0);
    for (size_t q = 0; q < m; ++q) {
        for (long i = 0; i < cycles; ++i) num[size_t(i)] = occ[size_t(i) * m + q];
        const auto [value, se] = detail::ratio_batch(num, len);
        out.push_back({xs[q], value, se});
    }
    return out;
}

}  // namespace lwf
