#include "vtm/datamodel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vtm/binio.hpp"
#include "vtm/errors.hpp"
#include "vtm/rng.hpp"

namespace fs = std::filesystem;

namespace vtm {

LabelVocabulary::LabelVocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
    std::set<std::string> seen;
    for (const auto& l : labels_) {
        if (l.empty()) throw DataError("vocabulary: empty label");
        if (!seen.insert(l).second) throw DataError("vocabulary: duplicate label '" + l + "'");
    }
}

int64_t LabelVocabulary::index_of(const std::string& label) const {
    for (size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label) return static_cast<int64_t>(i);
    return -1;
}

std::vector<const ManifestEntry*> DatasetManifest::split_entries(const std::string& split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(&e);
    return out;
}

// ------------------------------------------------------------------ clip I/O

namespace {
constexpr char kMagic[6] = {'V', 'C', 'L', 'P', '1', '\0'};
}

void save_clip(const VideoClip& clip, const fs::path& path) {
    if (clip.frames < 1 || clip.height < 1 || clip.width < 1 || clip.channels != 3)
        throw DataError("save_clip: bad dims for '" + clip.id + "'");
    if (static_cast<int64_t>(clip.data.size()) != clip.numel())
        throw DataError("save_clip: payload size mismatch for '" + clip.id + "'");
    for (float v : clip.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw DataError("save_clip: value outside [0,1] in '" + clip.id + "'");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_clip: cannot open '" + path.string() + "'");
    os.write(kMagic, 6);
    binio::write_u32(os, static_cast<uint32_t>(clip.frames));
    binio::write_u32(os, static_cast<uint32_t>(clip.height));
    binio::write_u32(os, static_cast<uint32_t>(clip.width));
    binio::write_u32(os, static_cast<uint32_t>(clip.channels));
    binio::write_u32(os, 0);
    for (float v : clip.data) binio::write_f32(os, v);
    if (!os) throw DataError("save_clip: write failure on '" + path.string() + "'");
}

VideoClip load_clip(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_clip: cannot open '" + path.string() + "'");
    char magic[6];
    if (!is.read(magic, 6) || !std::equal(magic, magic + 6, kMagic))
        throw BadMagicError("load_clip: bad magic in '" + path.string() + "'");
    uint32_t f, h, w, c, reserved;
    if (!binio::read_u32(is, f) || !binio::read_u32(is, h) || !binio::read_u32(is, w) ||
        !binio::read_u32(is, c) || !binio::read_u32(is, reserved))
        throw TruncatedPayloadError("load_clip: short header in '" + path.string() + "'");
    if (f < 1 || h < 1 || w < 1 || c != 3 || reserved != 0)
        throw DimMismatchError("load_clip: bad dims in '" + path.string() + "'");
    VideoClip clip;
    clip.id = path.stem().string();
    clip.frames = f;
    clip.height = h;
    clip.width = w;
    clip.channels = c;
    clip.data.resize(static_cast<size_t>(clip.numel()));
    for (auto& v : clip.data)
        if (!binio::read_f32(is, v))
            throw TruncatedPayloadError("load_clip: truncated payload in '" + path.string() + "'");
    for (float v : clip.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw DataError("load_clip: value outside [0,1] in '" + path.string() + "'");
    return clip;
}

// -------------------------------------------------------------- manifest I/O

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    fs::path target = path.empty() ? manifest.root / "manifest.tsv" : path;
    std::ofstream os(target);
    if (!os) throw DataError("save_manifest: cannot open '" + target.string() + "'");
    os << "#vocab:";
    for (int64_t i = 0; i < manifest.vocab.size(); ++i) {
        if (i) os << '|';
        os << manifest.vocab.label(i);
    }
    os << '\n';
    for (const auto& e : manifest.entries) {
        os << e.clip_id << '\t' << e.path << '\t';
        for (size_t i = 0; i < e.label_indices.size(); ++i) {
            if (i) os << ',';
            os << e.label_indices[i];
        }
        os << '\t' << e.split << '\n';
    }
    if (!os) throw DataError("save_manifest: write failure on '" + target.string() + "'");
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_manifest: cannot open '" + path.string() + "'");
    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    if (!std::getline(is, line) || line.rfind("#vocab:", 0) != 0)
        throw DataError("load_manifest: missing #vocab header in '" + path.string() + "'");
    m.vocab = LabelVocabulary(split_on(line.substr(7), '|'));
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_on(line, '\t');
        if (fields.size() != 4)
            throw DataError("load_manifest: line " + std::to_string(lineno) + ": expected 4 fields");
        ManifestEntry e;
        e.clip_id = fields[0];
        e.path = fields[1];
        for (const auto& part : split_on(fields[2], ',')) {
            size_t pos = 0;
            int64_t idx;
            try {
                idx = std::stoll(part, &pos);
            } catch (const std::exception&) {
                throw DataError("load_manifest: line " + std::to_string(lineno) + ": bad label index");
            }
            if (pos != part.size() || idx < 0 || idx >= m.vocab.size())
                throw DataError("load_manifest: line " + std::to_string(lineno) + ": bad label index");
            e.label_indices.push_back(idx);
        }
        if (e.label_indices.empty())
            throw DataError("load_manifest: line " + std::to_string(lineno) + ": no labels");
        e.split = fields[3];
        if (e.split != "train" && e.split != "val")
            throw DataError("load_manifest: line " + std::to_string(lineno) + ": bad split '" + e.split + "'");
        if (!fs::exists(m.root / e.path))
            throw DataError("load_manifest: missing clip file '" + e.path + "'");
        m.entries.push_back(std::move(e));
    }
    return m;
}

// ------------------------------------------------------- synthetic generator

namespace {

struct Motif {
    std::string verb, dir;
};

const std::array<std::string, 4> kVerbs = {"move", "grow", "shrink", "rotate"};
const std::array<std::string, 4> kDirs = {"left", "right", "up", "down"};

std::vector<Motif> motif_table() {
    // two verbs cross all four directions in the first eight entries, so a
    // held-out pair still leaves both of its words in the training vocabulary
    std::vector<Motif> out;
    for (size_t half = 0; half < 2; ++half)
        for (const auto& d : kDirs)
            for (size_t v = 0; v < 2; ++v) out.push_back({kVerbs[2 * half + v], d});
    return out;
}

struct MotifDraw {
    Motif motif;
    double px, py;    // path midpoint
    double s0;        // base half-extent
    double fr, fg, fb;  // foreground color
};

void dir_vector(const std::string& dir, double& dx, double& dy) {
    dx = dy = 0.0;
    if (dir == "left") dx = -1.0;
    else if (dir == "right") dx = 1.0;
    else if (dir == "up") dy = -1.0;
    else dy = 1.0;
}

// rotated-box signed distance, normalized coordinates
double box_sdf(double x, double y, double cx, double cy, double hx, double hy, double theta) {
    double dx = x - cx, dy = y - cy;
    double ct = std::cos(theta), st = std::sin(theta);
    double lx = ct * dx + st * dy;
    double ly = -st * dx + ct * dy;
    double qx = std::fabs(lx) - hx;
    double qy = std::fabs(ly) - hy;
    double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

void render_motif(VideoClip& clip, const MotifDraw& d) {
    const int64_t S = clip.height;
    const double drift = 0.30;
    double ddx, ddy;
    dir_vector(d.motif.dir, ddx, ddy);
    for (int64_t f = 0; f < clip.frames; ++f) {
        double alpha = clip.frames > 1 ? static_cast<double>(f) / static_cast<double>(clip.frames - 1) : 0.0;
        double cx = d.px + drift * ddx * (alpha - 0.5);
        double cy = d.py + drift * ddy * (alpha - 0.5);
        double hx = d.s0, hy = d.s0, theta = 0.0;
        if (d.motif.verb == "grow") {
            hx = hy = d.s0 * (1.0 + alpha);
        } else if (d.motif.verb == "shrink") {
            hx = hy = d.s0 * (2.0 - alpha);
        } else if (d.motif.verb == "rotate") {
            hx = d.s0 * 1.35;
            hy = d.s0 * 0.45;
            theta = M_PI * alpha;
        }
        const double aa = 1.2 / static_cast<double>(S);
        for (int64_t y = 0; y < S; ++y)
            for (int64_t x = 0; x < S; ++x) {
                double pxn = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
                double pyn = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
                double dist = box_sdf(pxn, pyn, cx, cy, hx, hy, theta);
                double cov = std::clamp(0.5 - dist / aa, 0.0, 1.0);
                if (cov <= 0.0) continue;
                const double fgc[3] = {d.fr, d.fg, d.fb};
                for (int64_t c = 0; c < 3; ++c) {
                    float& px = clip.at(f, y, x, c);
                    px = static_cast<float>(px + cov * (fgc[c] - px));
                }
            }
    }
}

MotifDraw draw_params(const Motif& motif, Rng& rng) {
    MotifDraw d;
    d.motif = motif;
    d.px = rng.uniform(0.44, 0.56);
    d.py = rng.uniform(0.44, 0.56);
    d.s0 = rng.uniform(0.09, 0.12);
    d.fr = rng.uniform(0.60, 0.95);
    d.fg = rng.uniform(0.60, 0.95);
    d.fb = rng.uniform(0.60, 0.95);
    return d;
}

VideoClip make_background(const SyntheticSpec& spec, Rng& rng) {
    VideoClip clip;
    clip.frames = spec.frames;
    clip.height = clip.width = spec.size;
    clip.channels = 3;
    float bg = static_cast<float>(rng.uniform(0.10, 0.30));
    clip.data.assign(static_cast<size_t>(clip.numel()), bg);
    return clip;
}

int verb_index(const std::string& verb) {
    for (size_t i = 0; i < kVerbs.size(); ++i)
        if (kVerbs[i] == verb) return static_cast<int>(i);
    return 0;
}

int dir_index(const std::string& dir) {
    for (size_t i = 0; i < kDirs.size(); ++i)
        if (kDirs[i] == dir) return static_cast<int>(i);
    return 0;
}

// scene context: the verb tints the backdrop, the direction adds its own color
// cast plus a brightness ramp along the motion axis; the casts survive patch
// pooling while the ramp and the motif carry the fine-grained signal
void paint_scene(VideoClip& clip, const Motif& motif, double weight, Rng& rng) {
    static const double verb_tints[4][3] = {{0.10, 0.00, -0.06},
                                            {-0.06, 0.10, 0.00},
                                            {0.00, -0.06, 0.10},
                                            {0.09, 0.09, -0.06}};
    static const double dir_tints[4][3] = {{-0.08, 0.03, 0.08},
                                           {0.08, -0.03, -0.08},
                                           {0.06, 0.08, -0.03},
                                           {-0.06, -0.08, 0.03}};
    const double* vt = verb_tints[verb_index(motif.verb)];
    const double* dt = dir_tints[dir_index(motif.dir)];
    const double vs = rng.uniform(0.7, 1.0) * weight;
    const double ds = rng.uniform(0.7, 1.0) * weight;
    const double slope = rng.uniform(0.12, 0.20) * weight;
    double gx, gy;
    dir_vector(motif.dir, gx, gy);
    const int64_t S = clip.height;
    for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) {
            const double xn = (static_cast<double>(x) + 0.5) / static_cast<double>(S) - 0.5;
            const double yn = (static_cast<double>(y) + 0.5) / static_cast<double>(S) - 0.5;
            const double ramp = slope * (xn * gx + yn * gy);
            for (int64_t c = 0; c < 3; ++c) {
                const double delta = vs * vt[c] + ds * dt[c] + ramp;
                for (int64_t f = 0; f < clip.frames; ++f) {
                    float& px = clip.at(f, y, x, c);
                    px = static_cast<float>(std::clamp(px + delta, 0.02, 0.98));
                }
            }
        }
}

std::string slug(const std::string& name) {
    std::string s = name;
    std::replace(s.begin(), s.end(), ' ', '-');
    return s;
}

std::string clip_file_name(const std::string& id) { return "clips/" + id + ".vclip"; }

uint64_t clip_seed(uint64_t base, uint64_t cls, uint64_t split_code, uint64_t idx) {
    return Rng::mix(Rng::mix(Rng::mix(base, cls + 1), split_code), idx + 1);
}

}  // namespace

std::vector<std::string> synthetic_motifs() {
    std::vector<std::string> out;
    for (const auto& m : motif_table()) out.push_back(m.verb + " " + m.dir);
    return out;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
    auto motifs = motif_table();
    if (spec.num_classes < 1 || spec.num_classes > static_cast<int64_t>(motifs.size()))
        throw ConfigError("generate_synthetic: class count must be in [1, " +
                          std::to_string(motifs.size()) + "]");
    if (spec.frames < 1 || spec.size < 4)
        throw ConfigError("generate_synthetic: frames >= 1 and size >= 4 required");
    if (spec.train_per_class < 1 || spec.val_per_class < 0)
        throw ConfigError("generate_synthetic: per-class counts invalid");

    std::error_code ec;
    fs::create_directories(out_dir / "clips", ec);
    if (ec) throw DataError("generate_synthetic: cannot create '" + out_dir.string() + "': " + ec.message());

    std::vector<std::string> class_names;
    for (int64_t i = 0; i < spec.num_classes; ++i)
        class_names.push_back(motifs[static_cast<size_t>(i)].verb + " " + motifs[static_cast<size_t>(i)].dir);

    DatasetManifest m;
    m.root = out_dir;
    m.vocab = LabelVocabulary(class_names);

    auto emit_single = [&](int64_t cls, const std::string& split, uint64_t split_code, int64_t idx) {
        Rng rng(clip_seed(spec.seed, static_cast<uint64_t>(cls), split_code, static_cast<uint64_t>(idx)));
        VideoClip clip = make_background(spec, rng);
        paint_scene(clip, motifs[static_cast<size_t>(cls)], 1.0, rng);
        render_motif(clip, draw_params(motifs[static_cast<size_t>(cls)], rng));
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d", static_cast<int>(idx));
        clip.id = slug(class_names[static_cast<size_t>(cls)]) + "_" + split + "_" + buf;
        clip.label_indices = {cls};
        save_clip(clip, out_dir / clip_file_name(clip.id));
        m.entries.push_back({clip.id, clip_file_name(clip.id), {cls}, split});
    };

    auto emit_multi = [&](const std::string& split, uint64_t split_code, int64_t idx) {
        int64_t a = idx % spec.num_classes;
        int64_t b = (a + 1) % spec.num_classes;
        Rng rng(clip_seed(spec.seed, 1000 + static_cast<uint64_t>(a), split_code, static_cast<uint64_t>(idx)));
        VideoClip clip = make_background(spec, rng);
        paint_scene(clip, motifs[static_cast<size_t>(a)], 0.5, rng);
        paint_scene(clip, motifs[static_cast<size_t>(b)], 0.5, rng);
        MotifDraw da = draw_params(motifs[static_cast<size_t>(a)], rng);
        MotifDraw db = draw_params(motifs[static_cast<size_t>(b)], rng);
        da.px -= 0.22;
        db.px += 0.22;
        da.s0 *= 0.75;
        db.s0 *= 0.75;
        render_motif(clip, da);
        render_motif(clip, db);
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d", static_cast<int>(idx));
        clip.id = std::string("multi_") + split + "_" + buf;
        std::vector<int64_t> labels = {std::min(a, b), std::max(a, b)};
        if (a == b) labels = {a};
        clip.label_indices = labels;
        save_clip(clip, out_dir / clip_file_name(clip.id));
        m.entries.push_back({clip.id, clip_file_name(clip.id), labels, split});
    };

    for (int64_t cls = 0; cls < spec.num_classes; ++cls)
        for (int64_t i = 0; i < spec.train_per_class; ++i) emit_single(cls, "train", 1, i);
    for (int64_t i = 0; i < spec.multi_label_train; ++i) emit_multi("train", 1, i);
    for (int64_t cls = 0; cls < spec.num_classes; ++cls)
        for (int64_t i = 0; i < spec.val_per_class; ++i) emit_single(cls, "val", 2, i);
    for (int64_t i = 0; i < spec.multi_label_val; ++i) emit_multi("val", 2, i);

    save_manifest(m);
    return m;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           uint64_t seed, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split_manifest: fraction must be in (0, 1)");
    if (manifest.entries.empty()) throw DataError("split_manifest: empty manifest");

    std::map<int64_t, std::vector<size_t>> by_class;
    for (size_t i = 0; i < manifest.entries.size(); ++i)
        by_class[manifest.entries[i].label_indices.front()].push_back(i);

    std::set<size_t> train_set;
    for (auto& [cls, idxs] : by_class) {
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(cls)));
        for (size_t i = idxs.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(idxs[i - 1], idxs[j]);
        }
        auto k = static_cast<size_t>(std::llround(fraction * static_cast<double>(idxs.size())));
        for (size_t i = 0; i < k; ++i) train_set.insert(idxs[i]);
    }

    DatasetManifest train{manifest.root, manifest.vocab, {}};
    DatasetManifest val{manifest.root, manifest.vocab, {}};
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        ManifestEntry e = manifest.entries[i];
        if (train_set.count(i)) {
            e.split = "train";
            train.entries.push_back(std::move(e));
        } else {
            e.split = "val";
            val.entries.push_back(std::move(e));
        }
    }
    return {std::move(train), std::move(val)};
}

}  // namespace vtm
