#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "usdrl/rng.hpp"

namespace usdrl::skelio {

using json = nlohmann::json;

/// Per-frame joint coordinates, [T][M][V][C] flattened row-major.
struct FrameArray {
    std::size_t t = 0, m = 0, v = 0, c = 0;
    std::vector<double> data;

    FrameArray() = default;
    FrameArray(std::size_t t_, std::size_t m_, std::size_t v_, std::size_t c_)
        : t(t_), m(m_), v(v_), c(c_), data(t_ * m_ * v_ * c_, 0.0) {}

    double& at(std::size_t ti, std::size_t mi, std::size_t vi, std::size_t ci) {
        return data[((ti * m + mi) * v + vi) * c + ci];
    }
    double at(std::size_t ti, std::size_t mi, std::size_t vi, std::size_t ci) const {
        return data[((ti * m + mi) * v + vi) * c + ci];
    }
    bool person_present(std::size_t ti, std::size_t mi) const {
        for (std::size_t vi = 0; vi < v; ++vi)
            for (std::size_t ci = 0; ci < c; ++ci)
                if (at(ti, mi, vi, ci) != 0.0) return true;
        return false;
    }
};

struct SkeletonSequence {
    std::string id;
    FrameArray frames;
    std::optional<int> label;
    std::optional<int> view;
    std::optional<int> subject;
    std::optional<std::vector<int>> frame_labels;  // -1 = background
};

struct DatasetManifest {
    std::size_t joint_count = 0;
    std::size_t person_slots = 0;
    std::size_t coord_dims = 0;
    std::vector<std::pair<int, int>> edges;  // (child, parent)
    std::vector<std::string> class_names;
    std::map<std::string, std::string> splits;  // split name -> file path
    std::string base_dir;                       // directory of the manifest file

    /// Root = the unique joint that never appears as a child.
    int root_joint() const {
        std::vector<bool> is_child(joint_count, false);
        for (auto& [c, p] : edges) is_child[static_cast<std::size_t>(c)] = true;
        for (std::size_t v = 0; v < joint_count; ++v)
            if (!is_child[v]) return static_cast<int>(v);
        return 0;
    }

    void validate() const {
        if (joint_count < 1 || person_slots < 1)
            throw std::runtime_error("manifest: joint_count and person_slots must be >= 1");
        if (coord_dims != 2 && coord_dims != 3)
            throw std::runtime_error("manifest: coord_dims must be 2 or 3");
        if (edges.size() != joint_count - 1)
            throw std::runtime_error("manifest: edge list must have joint_count-1 entries");
        std::vector<int> parent(joint_count, -2);
        std::size_t child_count = 0;
        for (auto& [c, p] : edges) {
            if (c < 0 || p < 0 || static_cast<std::size_t>(c) >= joint_count ||
                static_cast<std::size_t>(p) >= joint_count)
                throw std::runtime_error("manifest: edge joint index out of range");
            if (parent[static_cast<std::size_t>(c)] != -2)
                throw std::runtime_error("manifest: joint appears twice as a child");
            parent[static_cast<std::size_t>(c)] = p;
            ++child_count;
        }
        (void)child_count;
        // connectivity: every joint must reach the root by parent hops
        const int root = root_joint();
        for (std::size_t v = 0; v < joint_count; ++v) {
            int cur = static_cast<int>(v);
            std::size_t hops = 0;
            while (cur != root) {
                if (parent[static_cast<std::size_t>(cur)] == -2 || hops > joint_count)
                    throw std::runtime_error("manifest: edges do not form a tree");
                cur = parent[static_cast<std::size_t>(cur)];
                ++hops;
            }
        }
    }

    std::string split_path(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end())
            throw std::runtime_error("manifest: unknown split '" + name + "'");
        std::filesystem::path p(it->second);
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        return p.string();
    }
};

/// Augmentation switches and ranges. A default-constructed spec is the
/// identity transform.
struct AugSpec {
    double rot_x_deg[2] = {0, 0};
    double rot_y_deg[2] = {0, 0};
    double rot_z_deg[2] = {0, 0};
    double shear[2] = {0, 0};
    double scale[2] = {1, 1};
    double jitter_std = 0;        // meters
    double crop_ratio[2] = {1, 1};
    double flip_prob = 0;
    std::uint64_t seed = 0;

    void validate() const {
        auto ordered = [](const double r[2]) { return r[0] <= r[1]; };
        if (!ordered(rot_x_deg) || !ordered(rot_y_deg) || !ordered(rot_z_deg) ||
            !ordered(shear) || !ordered(scale) || !ordered(crop_ratio))
            throw std::runtime_error("AugSpec: range lo must be <= hi");
        if (jitter_std < 0) throw std::runtime_error("AugSpec: jitter_std must be >= 0");
        if (flip_prob < 0 || flip_prob > 1)
            throw std::runtime_error("AugSpec: flip_prob must be within [0,1]");
        if (crop_ratio[0] <= 0 || crop_ratio[1] > 1)
            throw std::runtime_error("AugSpec: crop ratios must lie in (0,1]");
    }

    /// The standard skeleton augmentation set at conventional strengths.
    static AugSpec standard(std::uint64_t seed) {
        AugSpec s;
        s.rot_x_deg[0] = -15; s.rot_x_deg[1] = 15;
        s.rot_y_deg[0] = -15; s.rot_y_deg[1] = 15;
        s.rot_z_deg[0] = -30; s.rot_z_deg[1] = 30;
        s.shear[0] = -0.3; s.shear[1] = 0.3;
        s.scale[0] = 0.9; s.scale[1] = 1.1;
        s.jitter_std = 0.01;
        s.crop_ratio[0] = 0.7; s.crop_ratio[1] = 1.0;
        s.flip_prob = 0.0;
        s.seed = seed;
        return s;
    }
};

// ---------------------------------------------------------------------------
// modality derivation

inline SkeletonSequence derive_bone(const SkeletonSequence& seq,
                                    const std::vector<std::pair<int, int>>& edges) {
    SkeletonSequence out = seq;
    auto& f = out.frames;
    for (double& d : f.data) d = 0.0;
    for (std::size_t ti = 0; ti < f.t; ++ti)
        for (std::size_t mi = 0; mi < f.m; ++mi)
            for (auto& [child, parent] : edges)
                for (std::size_t ci = 0; ci < f.c; ++ci)
                    f.at(ti, mi, static_cast<std::size_t>(child), ci) =
                        seq.frames.at(ti, mi, static_cast<std::size_t>(child), ci) -
                        seq.frames.at(ti, mi, static_cast<std::size_t>(parent), ci);
    return out;
}

inline SkeletonSequence derive_motion(const SkeletonSequence& seq) {
    SkeletonSequence out = seq;
    auto& f = out.frames;
    const std::size_t per_frame = f.m * f.v * f.c;
    for (std::size_t ti = 0; ti + 1 < f.t; ++ti)
        for (std::size_t j = 0; j < per_frame; ++j)
            f.data[ti * per_frame + j] =
                seq.frames.data[(ti + 1) * per_frame + j] - seq.frames.data[ti * per_frame + j];
    if (f.t >= 1)
        for (std::size_t j = 0; j < per_frame; ++j) f.data[(f.t - 1) * per_frame + j] = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// temporal resampling

inline SkeletonSequence temporal_resample(const SkeletonSequence& seq, std::size_t t_out) {
    if (t_out < 1) throw std::runtime_error("temporal_resample: T must be >= 1");
    const auto& in = seq.frames;
    if (t_out == in.t) return seq;  // identity, bit-exact

    SkeletonSequence out = seq;
    out.frames = FrameArray(t_out, in.m, in.v, in.c);
    std::vector<int> labels_out;
    const bool has_labels = seq.frame_labels.has_value();
    if (has_labels) labels_out.resize(t_out);

    const std::size_t per_frame = in.m * in.v * in.c;
    for (std::size_t i = 0; i < t_out; ++i) {
        const double src = (t_out == 1 || in.t == 1)
                               ? 0.0
                               : static_cast<double>(i) * static_cast<double>(in.t - 1) /
                                     static_cast<double>(t_out - 1);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in.t - 1);
        const double frac = src - static_cast<double>(lo);
        for (std::size_t j = 0; j < per_frame; ++j)
            out.frames.data[i * per_frame + j] =
                (1.0 - frac) * in.data[lo * per_frame + j] + frac * in.data[hi * per_frame + j];
        if (has_labels)
            labels_out[i] = (*seq.frame_labels)[static_cast<std::size_t>(std::lround(src))];
    }
    if (has_labels) out.frame_labels = std::move(labels_out);
    return out;
}

// ---------------------------------------------------------------------------
// augmentation

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 mat3_identity() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
            r[i][j] = s;
        }
    return r;
}

inline Mat3 rot_axis(int axis, double deg) {
    const double th = deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    Mat3 r = mat3_identity();
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    r[a][a] = cs; r[a][b] = -sn;
    r[b][a] = sn; r[b][b] = cs;
    return r;
}

inline bool mat3_is_identity(const Mat3& m) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (m[i][j] != (i == j ? 1.0 : 0.0)) return false;
    return true;
}

}  // namespace detail

/// Deterministic augmentation with an explicit seed. Absent (all-zero) person
/// slices are left untouched; labels and metadata are preserved.
inline SkeletonSequence augment_seeded(const SkeletonSequence& seq, const AugSpec& spec,
                                       std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    SkeletonSequence out = seq;
    auto& f = out.frames;

    // One combined linear map: flip * scale * shear * Rz * Ry * Rx.
    detail::Mat3 lin = detail::mat3_identity();
    auto draw = [&rng](const double r[2]) { return r[0] == r[1] ? r[0] : rng.uniform(r[0], r[1]); };
    const double ax = draw(spec.rot_x_deg), ay = draw(spec.rot_y_deg), az = draw(spec.rot_z_deg);
    if (ax != 0) lin = detail::mat3_mul(detail::rot_axis(0, ax), lin);
    if (ay != 0) lin = detail::mat3_mul(detail::rot_axis(1, ay), lin);
    if (az != 0) lin = detail::mat3_mul(detail::rot_axis(2, az), lin);
    if (spec.shear[0] != 0 || spec.shear[1] != 0) {
        detail::Mat3 sh = detail::mat3_identity();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) sh[i][j] = draw(spec.shear);
        lin = detail::mat3_mul(sh, lin);
    }
    const double sc = draw(spec.scale);
    if (sc != 1.0)
        for (auto& row : lin)
            for (auto& x : row) x *= sc;
    if (spec.flip_prob > 0 && rng.uniform() < spec.flip_prob)
        for (auto& x : lin[0]) x = -x;

    if (!detail::mat3_is_identity(lin)) {
        for (std::size_t ti = 0; ti < f.t; ++ti)
            for (std::size_t mi = 0; mi < f.m; ++mi) {
                if (!f.person_present(ti, mi)) continue;
                for (std::size_t vi = 0; vi < f.v; ++vi) {
                    double p[3] = {0, 0, 0};
                    for (std::size_t ci = 0; ci < f.c; ++ci) p[ci] = f.at(ti, mi, vi, ci);
                    double q[3];
                    for (int i = 0; i < 3; ++i)
                        q[i] = lin[i][0] * p[0] + lin[i][1] * p[1] + lin[i][2] * p[2];
                    for (std::size_t ci = 0; ci < f.c; ++ci) f.at(ti, mi, vi, ci) = q[ci];
                }
            }
    }

    // temporal crop + resize back to the original length
    if (spec.crop_ratio[0] != 1.0 || spec.crop_ratio[1] != 1.0) {
        const double ratio = draw(spec.crop_ratio);
        const auto t_raw = f.t;
        auto len = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(t_raw)));
        len = std::max<std::size_t>(1, std::min(len, t_raw));
        if (len < t_raw) {
            const auto start =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(t_raw - len)));
            SkeletonSequence window = out;
            window.frames = FrameArray(len, f.m, f.v, f.c);
            const std::size_t per_frame = f.m * f.v * f.c;
            std::copy(f.data.begin() + static_cast<std::ptrdiff_t>(start * per_frame),
                      f.data.begin() + static_cast<std::ptrdiff_t>((start + len) * per_frame),
                      window.frames.data.begin());
            if (out.frame_labels) {
                std::vector<int> wl(out.frame_labels->begin() + static_cast<std::ptrdiff_t>(start),
                                    out.frame_labels->begin() +
                                        static_cast<std::ptrdiff_t>(start + len));
                window.frame_labels = std::move(wl);
            }
            out = temporal_resample(window, t_raw);
        }
    }

    if (spec.jitter_std > 0) {
        auto& g = out.frames;
        for (std::size_t ti = 0; ti < g.t; ++ti)
            for (std::size_t mi = 0; mi < g.m; ++mi) {
                if (!g.person_present(ti, mi)) continue;
                for (std::size_t vi = 0; vi < g.v; ++vi)
                    for (std::size_t ci = 0; ci < g.c; ++ci)
                        g.at(ti, mi, vi, ci) += rng.normal(0.0, spec.jitter_std);
            }
    }
    return out;
}

inline SkeletonSequence augment(const SkeletonSequence& seq, const AugSpec& spec) {
    return augment_seeded(seq, spec, spec.seed);
}

// ---------------------------------------------------------------------------
// JSON(L) ingestion

inline void validate_sequence(const SkeletonSequence& seq, const DatasetManifest& manifest) {
    const auto& f = seq.frames;
    if (f.t < 1) throw std::runtime_error("record '" + seq.id + "': empty frame array");
    if (f.m != manifest.person_slots || f.v != manifest.joint_count || f.c != manifest.coord_dims)
        throw std::runtime_error("record '" + seq.id + "': frame shape [" + std::to_string(f.t) +
                                 "][" + std::to_string(f.m) + "][" + std::to_string(f.v) + "][" +
                                 std::to_string(f.c) + "] does not match manifest");
    for (double d : f.data)
        if (!std::isfinite(d))
            throw std::runtime_error("record '" + seq.id + "': non-finite coordinate");
    const auto n_classes = static_cast<int>(manifest.class_names.size());
    if (seq.label && (*seq.label < 0 || *seq.label >= n_classes))
        throw std::runtime_error("record '" + seq.id + "': label out of range");
    if (seq.frame_labels) {
        if (seq.frame_labels->size() != f.t)
            throw std::runtime_error("record '" + seq.id + "': frame_labels length mismatch");
        for (int l : *seq.frame_labels)
            if (l < -1 || l >= n_classes)
                throw std::runtime_error("record '" + seq.id + "': frame label out of range");
    }
}

/// Subtracts the first person's root joint of frame 0 from every present
/// person slice; absent slices stay all-zero.
inline void center_on_root(SkeletonSequence& seq, int root_joint) {
    auto& f = seq.frames;
    double center[3] = {0, 0, 0};
    for (std::size_t ci = 0; ci < f.c; ++ci)
        center[ci] = f.at(0, 0, static_cast<std::size_t>(root_joint), ci);
    bool all_zero = true;
    for (std::size_t ci = 0; ci < f.c; ++ci)
        if (center[ci] != 0.0) all_zero = false;
    if (all_zero) return;
    for (std::size_t ti = 0; ti < f.t; ++ti)
        for (std::size_t mi = 0; mi < f.m; ++mi) {
            if (!f.person_present(ti, mi)) continue;
            for (std::size_t vi = 0; vi < f.v; ++vi)
                for (std::size_t ci = 0; ci < f.c; ++ci) f.at(ti, mi, vi, ci) -= center[ci];
        }
}

inline SkeletonSequence sequence_from_json(const json& j, const DatasetManifest& manifest) {
    SkeletonSequence seq;
    seq.id = j.at("id").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null()) seq.label = j.at("label").get<int>();
    if (j.contains("view") && !j.at("view").is_null()) seq.view = j.at("view").get<int>();
    if (j.contains("subject") && !j.at("subject").is_null())
        seq.subject = j.at("subject").get<int>();
    if (j.contains("frame_labels") && !j.at("frame_labels").is_null())
        seq.frame_labels = j.at("frame_labels").get<std::vector<int>>();

    const auto& fr = j.at("frames");
    const std::size_t t = fr.size();
    if (t == 0) throw std::runtime_error("record '" + seq.id + "': empty frame array");
    seq.frames = FrameArray(t, manifest.person_slots, manifest.joint_count, manifest.coord_dims);
    for (std::size_t ti = 0; ti < t; ++ti) {
        const auto& ft = fr[ti];
        if (ft.size() != manifest.person_slots)
            throw std::runtime_error("record '" + seq.id + "': person count mismatch");
        for (std::size_t mi = 0; mi < manifest.person_slots; ++mi) {
            const auto& fm = ft[mi];
            if (fm.size() != manifest.joint_count)
                throw std::runtime_error("record '" + seq.id + "': joint count mismatch");
            for (std::size_t vi = 0; vi < manifest.joint_count; ++vi) {
                const auto& fv = fm[vi];
                if (fv.size() != manifest.coord_dims)
                    throw std::runtime_error("record '" + seq.id + "': coordinate count mismatch");
                for (std::size_t ci = 0; ci < manifest.coord_dims; ++ci)
                    seq.frames.at(ti, mi, vi, ci) = fv[ci].get<double>();
            }
        }
    }
    return seq;
}

inline json sequence_to_json(const SkeletonSequence& seq) {
    json j;
    j["id"] = seq.id;
    j["label"] = seq.label ? json(*seq.label) : json(nullptr);
    j["view"] = seq.view ? json(*seq.view) : json(nullptr);
    j["subject"] = seq.subject ? json(*seq.subject) : json(nullptr);
    j["frame_labels"] = seq.frame_labels ? json(*seq.frame_labels) : json(nullptr);
    json frames = json::array();
    const auto& f = seq.frames;
    for (std::size_t ti = 0; ti < f.t; ++ti) {
        json jt = json::array();
        for (std::size_t mi = 0; mi < f.m; ++mi) {
            json jm = json::array();
            for (std::size_t vi = 0; vi < f.v; ++vi) {
                json jv = json::array();
                for (std::size_t ci = 0; ci < f.c; ++ci) jv.push_back(f.at(ti, mi, vi, ci));
                jm.push_back(std::move(jv));
            }
            jt.push_back(std::move(jm));
        }
        frames.push_back(std::move(jt));
    }
    j["frames"] = std::move(frames);
    return j;
}

inline std::vector<SkeletonSequence> load_split_file(const std::string& path,
                                                     const DatasetManifest& manifest,
                                                     bool center_root = true) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file '" + path + "'");
    std::vector<SkeletonSequence> out;
    std::string line;
    std::size_t line_no = 0;
    const int root = manifest.root_joint();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": malformed JSON at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        SkeletonSequence seq;
        try {
            seq = sequence_from_json(j, manifest);
            validate_sequence(seq, manifest);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": invalid record at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        if (center_root) center_on_root(seq, root);
        out.push_back(std::move(seq));
    }
    return out;
}

inline std::vector<SkeletonSequence> load_split(const DatasetManifest& manifest,
                                                const std::string& split_name,
                                                bool center_root = true) {
    return load_split_file(manifest.split_path(split_name), manifest, center_root);
}

inline void write_split(const std::string& path, const std::vector<SkeletonSequence>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write split file '" + path + "'");
    for (const auto& r : records) out << sequence_to_json(r).dump() << "\n";
}

inline DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    m.joint_count = j.at("joint_count").get<std::size_t>();
    m.person_slots = j.at("person_slots").get<std::size_t>();
    m.coord_dims = j.at("coord_dims").get<std::size_t>();
    for (const auto& e : j.at("edges"))
        m.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("splits"))
        for (auto& [k, v] : j.at("splits").items()) m.splits[k] = v.get<std::string>();
    m.validate();
    return m;
}

inline json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["joint_count"] = m.joint_count;
    j["person_slots"] = m.person_slots;
    j["coord_dims"] = m.coord_dims;
    json edges = json::array();
    for (auto& [c, p] : m.edges) edges.push_back(json::array({c, p}));
    j["edges"] = std::move(edges);
    j["class_names"] = m.class_names;
    j["splits"] = m.splits;
    return j;
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": malformed manifest JSON: " + e.what());
    }
    DatasetManifest m = manifest_from_json(j);
    m.base_dir = std::filesystem::path(path).parent_path().string();
    return m;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    out << manifest_to_json(m).dump(2) << "\n";
}

/// The 25-joint NTU RGB+D topology (ST-GCN edge convention, root = joint 20).
inline DatasetManifest ntu25_manifest() {
    DatasetManifest m;
    m.joint_count = 25;
    m.person_slots = 2;
    m.coord_dims = 3;
    m.edges = {{0, 1},   {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},
               {6, 5},   {7, 6},   {8, 20},  {9, 8},   {10, 9},  {11, 10},
               {12, 0},  {13, 12}, {14, 13}, {15, 14}, {16, 0},  {17, 16},
               {18, 17}, {19, 18}, {21, 22}, {22, 7},  {23, 24}, {24, 11}};
    for (int i = 0; i < 60; ++i) m.class_names.push_back("ntu_action_" + std::to_string(i));
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// synthetic data

/// Fixed per-view yaw used by the synthetic generator; exposed so tests can
/// verify the multi-view pairing geometry.
inline detail::Mat3 synth_view_rotation(int view) {
    return detail::rot_axis(2, view == 0 ? -25.0 : 25.0);
}

namespace detail {

inline std::vector<std::array<double, 3>> synth_rest_pose(std::size_t v_count,
                                                          std::uint64_t seed) {
    std::vector<std::array<double, 3>> pose(v_count);
    pose[0] = {0.0, 0.0, 1.0};
    for (std::size_t v = 1; v < v_count; ++v) {
        Rng r(mix_seed(seed, 0xB0DE, v));
        const std::size_t parent = (v - 1) / 2;
        const double az = r.uniform(0, 2 * 3.14159265358979323846);
        const double el = r.uniform(-0.6, 0.6);
        pose[v] = {pose[parent][0] + 0.3 * std::cos(az) * std::cos(el),
                   pose[parent][1] + 0.3 * std::sin(az) * std::cos(el),
                   pose[parent][2] + 0.3 * std::sin(el)};
    }
    return pose;
}

struct SynthMotion {
    // [V][3] sinusoid parameters
    std::vector<std::array<double, 3>> amp, freq, phase;
};

inline SynthMotion synth_class_motion(std::size_t v_count, int cls, std::uint64_t seed) {
    SynthMotion m;
    m.amp.resize(v_count);
    m.freq.resize(v_count);
    m.phase.resize(v_count);
    Rng r(mix_seed(seed, 0xC1A5, cls));
    for (std::size_t v = 0; v < v_count; ++v)
        for (int c = 0; c < 3; ++c) {
            m.amp[v][c] = r.uniform(0.05, 0.30);
            m.freq[v][c] = r.uniform(0.5, 3.0);
            m.phase[v][c] = r.uniform(0, 2 * 3.14159265358979323846);
        }
    return m;
}

inline FrameArray synth_trajectory(const std::vector<std::array<double, 3>>& rest,
                                   const SynthMotion& mo, std::size_t t_raw, std::size_t m_slots,
                                   std::size_t v_count, std::size_t c_dims, double subj_scale,
                                   double subj_phase, double noise_std, Rng& noise_rng) {
    FrameArray f(t_raw, m_slots, v_count, c_dims);
    for (std::size_t ti = 0; ti < t_raw; ++ti) {
        const double tt = static_cast<double>(ti) / static_cast<double>(t_raw);
        for (std::size_t vi = 0; vi < v_count; ++vi)
            for (std::size_t ci = 0; ci < c_dims; ++ci) {
                const double wave = subj_scale * mo.amp[vi][ci] *
                                    std::sin(2 * 3.14159265358979323846 * mo.freq[vi][ci] * tt +
                                             mo.phase[vi][ci] + subj_phase);
                f.at(ti, 0, vi, ci) =
                    rest[vi][ci] + wave + noise_std * noise_rng.normal();
            }
        // person slots beyond the first stay absent (all-zero)
    }
    return f;
}

inline void apply_view(FrameArray& f, const Mat3& rot) {
    for (std::size_t ti = 0; ti < f.t; ++ti)
        for (std::size_t mi = 0; mi < f.m; ++mi) {
            if (!f.person_present(ti, mi)) continue;
            for (std::size_t vi = 0; vi < f.v; ++vi) {
                double p[3] = {0, 0, 0};
                for (std::size_t ci = 0; ci < f.c; ++ci) p[ci] = f.at(ti, mi, vi, ci);
                double q[3];
                for (int i = 0; i < 3; ++i)
                    q[i] = rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
                for (std::size_t ci = 0; ci < f.c; ++ci) f.at(ti, mi, vi, ci) = q[ci];
            }
        }
}

}  // namespace detail

struct SynthDataset {
    DatasetManifest manifest;
    std::vector<SkeletonSequence> train;
    std::vector<SkeletonSequence> test;
};

/// Generates a balanced K-class dataset of fixed-tree sinusoid trajectories.
/// `per_class` counts records per class per split; consecutive record pairs
/// share a sample id and differ by a fixed view rotation (views 0 and 1), so
/// multi-view pairing works out of the box. Train and test use disjoint
/// subject pools.
inline SynthDataset synth_dataset(int classes, int per_class, std::size_t t_raw,
                                  std::size_t v_count, std::size_t m_slots, std::uint64_t seed) {
    if (classes < 2) throw std::runtime_error("synth_dataset: need at least 2 classes");
    if (per_class < 1) throw std::runtime_error("synth_dataset: per_class must be >= 1");
    SynthDataset ds;
    auto& man = ds.manifest;
    man.joint_count = v_count;
    man.person_slots = m_slots;
    man.coord_dims = 3;
    for (std::size_t v = 1; v < v_count; ++v)
        man.edges.emplace_back(static_cast<int>(v), static_cast<int>((v - 1) / 2));
    for (int k = 0; k < classes; ++k) man.class_names.push_back("class_" + std::to_string(k));
    man.validate();

    const auto rest = detail::synth_rest_pose(v_count, seed);
    std::vector<detail::SynthMotion> motions;
    for (int k = 0; k < classes; ++k)
        motions.push_back(detail::synth_class_motion(v_count, k, seed));

    constexpr int kSubjectsPerSplit = 10;
    auto gen_split = [&](bool is_train) {
        std::vector<SkeletonSequence> records;
        const char* tag = is_train ? "tr" : "te";
        for (int k = 0; k < classes; ++k) {
            for (int j = 0; j < per_class; ++j) {
                const int sample = j / 2;
                const int view = j % 2;
                const int subject =
                    (sample % kSubjectsPerSplit) + (is_train ? 0 : kSubjectsPerSplit);
                Rng subj_rng(mix_seed(seed, 0x5B1D, static_cast<std::uint64_t>(subject), k,
                                      static_cast<std::uint64_t>(sample), is_train ? 1 : 2));
                const double subj_scale = subj_rng.uniform(0.85, 1.15);
                const double subj_phase = subj_rng.uniform(-0.4, 0.4);
                Rng noise_rng(mix_seed(seed, 0x401E, k, static_cast<std::uint64_t>(sample),
                                       static_cast<std::uint64_t>(view), is_train ? 1 : 2));
                SkeletonSequence s;
                s.id = std::string(tag) + "_c" + std::to_string(k) + "_i" + std::to_string(sample);
                s.label = k;
                s.view = view;
                s.subject = subject;
                s.frames = detail::synth_trajectory(rest, motions[static_cast<std::size_t>(k)],
                                                    t_raw, m_slots, v_count, man.coord_dims,
                                                    subj_scale, subj_phase, 0.01, noise_rng);
                detail::apply_view(s.frames, synth_view_rotation(view));
                records.push_back(std::move(s));
            }
        }
        return records;
    };
    ds.train = gen_split(true);
    ds.test = gen_split(false);
    return ds;
}

/// Untrimmed long videos for detection/segmentation: action segments from the
/// same trajectory families, separated by near-still background stretches.
/// Frame labels use -1 for background.
inline std::vector<SkeletonSequence> synth_untrimmed(const DatasetManifest& manifest, int classes,
                                                     int videos, int segments_per_video,
                                                     std::uint64_t seed, bool is_train) {
    const std::size_t v_count = manifest.joint_count;
    const auto rest = detail::synth_rest_pose(v_count, seed);
    std::vector<detail::SynthMotion> motions;
    for (int k = 0; k < classes; ++k)
        motions.push_back(detail::synth_class_motion(v_count, k, seed));

    std::vector<SkeletonSequence> out;
    for (int vid = 0; vid < videos; ++vid) {
        Rng rng(mix_seed(seed, 0x10F6, static_cast<std::uint64_t>(vid), is_train ? 1 : 2));
        std::vector<double> coords;
        std::vector<int> labels;
        auto append_chunk = [&](int cls, std::size_t len) {
            Rng noise(mix_seed(seed, 0xF00D, static_cast<std::uint64_t>(vid), labels.size()));
            if (cls < 0) {
                for (std::size_t ti = 0; ti < len; ++ti) {
                    for (std::size_t vi = 0; vi < v_count; ++vi)
                        for (std::size_t ci = 0; ci < manifest.coord_dims; ++ci)
                            coords.push_back(rest[vi][ci] + 0.005 * noise.normal());
                    for (std::size_t mi = 1; mi < manifest.person_slots; ++mi)
                        for (std::size_t j = 0; j < v_count * manifest.coord_dims; ++j)
                            coords.push_back(0.0);
                    labels.push_back(-1);
                }
            } else {
                const double subj_scale = rng.uniform(0.85, 1.15);
                const double subj_phase = rng.uniform(-0.4, 0.4);
                FrameArray f = detail::synth_trajectory(rest, motions[static_cast<std::size_t>(cls)],
                                                        len, manifest.person_slots, v_count,
                                                        manifest.coord_dims, subj_scale, subj_phase,
                                                        0.01, noise);
                coords.insert(coords.end(), f.data.begin(), f.data.end());
                for (std::size_t ti = 0; ti < len; ++ti) labels.push_back(cls);
            }
        };
        for (int s = 0; s < segments_per_video; ++s) {
            append_chunk(-1, static_cast<std::size_t>(rng.uniform_int(20, 40)));
            const int cls = static_cast<int>(rng.uniform_int(0, classes - 1));
            append_chunk(cls, static_cast<std::size_t>(rng.uniform_int(40, 70)));
        }
        append_chunk(-1, static_cast<std::size_t>(rng.uniform_int(20, 40)));

        SkeletonSequence s;
        s.id = std::string(is_train ? "vtr" : "vte") + "_" + std::to_string(vid);
        s.view = 0;
        s.subject = vid;
        s.frame_labels = std::move(labels);
        s.frames = FrameArray(s.frame_labels->size(), manifest.person_slots, v_count,
                              manifest.coord_dims);
        s.frames.data = std::move(coords);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace usdrl::skelio
