#include "vtm/text_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "vtm/errors.hpp"

namespace vtm {

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> words_of(const std::string& text) {
    std::istringstream is(lowercase(text));
    std::vector<std::string> out;
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

}  // namespace

PromptTemplate make_template(PromptTemplate::Kind kind, const std::string& pattern) {
    const std::string marker = kSlotMarker;
    size_t first = pattern.find(marker);
    if (first == std::string::npos)
        throw ConfigError("template '" + pattern + "': missing " + marker + " slot");
    if (pattern.find(marker, first + 1) != std::string::npos)
        throw ConfigError("template '" + pattern + "': more than one slot");
    bool at_start = first == 0;
    bool at_end = first + marker.size() == pattern.size();
    switch (kind) {
        case PromptTemplate::Kind::prefix:
            if (!at_end) throw ConfigError("prefix template '" + pattern + "': slot must be at the end");
            break;
        case PromptTemplate::Kind::suffix:
            if (!at_start) throw ConfigError("suffix template '" + pattern + "': slot must be at the start");
            break;
        case PromptTemplate::Kind::cloze:
            if (at_start || at_end)
                throw ConfigError("cloze template '" + pattern + "': slot must be strictly interior");
            break;
    }
    return {kind, pattern};
}

const char* template_kind_name(PromptTemplate::Kind kind) {
    switch (kind) {
        case PromptTemplate::Kind::prefix: return "prefix";
        case PromptTemplate::Kind::cloze: return "cloze";
        case PromptTemplate::Kind::suffix: return "suffix";
    }
    return "?";
}

PromptTemplate::Kind template_kind_from_name(const std::string& name) {
    if (name == "prefix") return PromptTemplate::Kind::prefix;
    if (name == "cloze") return PromptTemplate::Kind::cloze;
    if (name == "suffix") return PromptTemplate::Kind::suffix;
    throw ConfigError("unknown template kind '" + name + "'");
}

std::string fill_template(const std::string& label, const PromptTemplate& tmpl) {
    std::string out = tmpl.pattern;
    size_t pos = out.find(kSlotMarker);
    out.replace(pos, std::string(kSlotMarker).size(), label);
    return out;
}

std::vector<PromptTemplate> default_templates() {
    using K = PromptTemplate::Kind;
    std::vector<PromptTemplate> out;
    auto add = [&](K k, const char* p) { out.push_back(make_template(k, p)); };
    add(K::prefix, "a video of action {label}");
    add(K::prefix, "a photo of action {label}");
    add(K::prefix, "human action of {label}");
    add(K::prefix, "a video of a person doing {label}");
    add(K::prefix, "a demonstration of {label}");
    add(K::prefix, "footage of the action {label}");
    add(K::cloze, "a person performs {label} in a scene");
    add(K::cloze, "human {label} carried out on camera");
    add(K::cloze, "the action {label} is being performed");
    add(K::cloze, "someone does {label} in this clip");
    add(K::cloze, "a clip where {label} happens");
    add(K::cloze, "watch the {label} motion unfold");
    add(K::suffix, "{label}, an action");
    add(K::suffix, "{label}, a video of human action");
    add(K::suffix, "{label} performed by a person");
    add(K::suffix, "{label} shown in a short clip");
    add(K::suffix, "{label}, captured on video");
    add(K::suffix, "{label} demonstrated on screen");
    return out;
}

std::vector<PromptTemplate> label_only_templates() {
    // bare label; classified as prefix (slot at end) to satisfy kind rules
    return {make_template(PromptTemplate::Kind::prefix, "{label}")};
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open template file '" + path.string() + "'");
    std::vector<PromptTemplate> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ConfigError("template file line " + std::to_string(lineno) + ": expected <kind>\\t<pattern>");
        out.push_back(make_template(template_kind_from_name(line.substr(0, tab)), line.substr(tab + 1)));
    }
    if (out.empty()) throw ConfigError("template file '" + path.string() + "' is empty");
    return out;
}

void save_templates(const std::vector<PromptTemplate>& templates, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write template file '" + path.string() + "'");
    for (const auto& t : templates) os << template_kind_name(t.kind) << '\t' << t.pattern << '\n';
}

// ------------------------------------------------------------------ tokenizer

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus) {
    static const std::set<std::string> specials = {"<pad>", "<sos>", "<eos>", "<unk>"};
    std::set<std::string> unique;
    for (const auto& text : corpus)
        for (const auto& w : words_of(text))
            if (!specials.count(w)) unique.insert(w);
    Tokenizer t;
    t.words_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
    t.words_.insert(t.words_.end(), unique.begin(), unique.end());
    return t;
}

Tokenizer Tokenizer::build_for(const LabelVocabulary& vocab,
                               const std::vector<PromptTemplate>& templates) {
    std::vector<std::string> corpus;
    for (const auto& label : vocab.labels()) {
        corpus.push_back(label);
        for (const auto& t : templates) corpus.push_back(fill_template(label, t));
    }
    return build(corpus);
}

Tokenizer Tokenizer::from_lines(const std::vector<std::string>& lines) {
    if (lines.size() < 4 || lines[0] != "<pad>" || lines[1] != "<sos>" || lines[2] != "<eos>" ||
        lines[3] != "<unk>")
        throw DataError("token vocabulary must start with <pad>, <sos>, <eos>, <unk>");
    std::set<std::string> seen;
    for (const auto& w : lines)
        if (!seen.insert(w).second) throw DataError("token vocabulary has duplicate '" + w + "'");
    Tokenizer t;
    t.words_ = lines;
    return t;
}

TokenSequence Tokenizer::encode(const std::string& text, int64_t context_len) const {
    if (context_len < 2) throw ConfigError("context_len must be >= 2");
    auto words = words_of(text);
    const auto max_words = static_cast<size_t>(context_len - 2);
    if (words.size() > max_words) words.resize(max_words);  // EOS stays the last kept token
    TokenSequence seq;
    seq.ids.assign(static_cast<size_t>(context_len), kPad);
    seq.ids[0] = kSos;
    size_t pos = 1;
    for (const auto& w : words) {
        auto it = std::find(words_.begin() + 4, words_.end(), w);
        seq.ids[pos++] = it == words_.end() ? kUnk
                                            : static_cast<int64_t>(it - words_.begin());
    }
    seq.ids[pos] = kEos;
    seq.eos_position = static_cast<int64_t>(pos);
    seq.length = seq.eos_position + 1;
    return seq;
}

// --------------------------------------------------------------- text encoder

TextEncoderParams make_text_encoder(ParamStore& store, int64_t vocab_size, int64_t width,
                                    int64_t layers, int64_t heads, int64_t context_len,
                                    int64_t embed_dim, Rng& rng) {
    if (width % heads != 0) throw ConfigError("text width must be divisible by heads");
    TextEncoderParams p;
    p.width = width;
    p.heads = heads;
    p.context_len = context_len;
    p.embed_dim = embed_dim;
    p.token_emb = store.add("text.token_emb", normal_init({vocab_size, width}, 0.02, rng));
    p.pos_emb = store.add("text.pos_emb", normal_init({context_len, width}, 0.01, rng));
    p.blocks = make_blocks(store, "text", layers, width, false, rng);
    p.ln_f_g = store.add("text.ln_f.g", Tensor::full({width}, 1.0));
    p.ln_f_b = store.add("text.ln_f.b", Tensor({width}));
    p.proj = store.add("text.proj",
                       normal_init({width, embed_dim}, 1.0 / std::sqrt(static_cast<double>(width)), rng));
    return p;
}

Var encode_text(const std::vector<TokenSequence>& tokens, const TextEncoderParams& params) {
    if (tokens.empty()) throw ConfigError("encode_text: empty batch");
    const int64_t N = static_cast<int64_t>(tokens.size());
    const int64_t T = params.context_len;
    std::vector<int64_t> flat_ids;
    flat_ids.reserve(static_cast<size_t>(N * T));
    std::vector<int64_t> eos_pos;
    const int64_t vocab = params.token_emb->value.dim(0);
    for (const auto& seq : tokens) {
        if (static_cast<int64_t>(seq.ids.size()) != T)
            throw ConfigError("encode_text: sequence length != context_len");
        if (seq.eos_position < 0 || seq.eos_position >= T)
            throw std::out_of_range("encode_text: eos_position out of range");
        for (int64_t id : seq.ids) {
            if (id < 0 || id >= vocab) throw DataError("encode_text: token id out of range");
            flat_ids.push_back(id);
        }
        eos_pos.push_back(seq.eos_position);
    }
    Var x = reshape(gather_rows(params.token_emb, flat_ids), {N, T, params.width});
    x = add_bcast(x, reshape(params.pos_emb, {T, params.width}));
    Var mask = leaf(causal_mask(T), false);
    x = transformer_stack(x, params.blocks, params.heads, mask);
    x = layer_norm(x, params.ln_f_g, params.ln_f_b);
    Var eos = select_per_row(x, eos_pos);  // [N, width]
    return matmul(eos, params.proj);
}

Var embed_label_set(const LabelVocabulary& vocab, const std::vector<PromptTemplate>& templates,
                    const Tokenizer& tokenizer, const TextEncoderParams& params,
                    LabelEmbedMode mode, uint64_t seed) {
    if (templates.empty()) throw ConfigError("embed_label_set: empty template list");
    const int64_t V = vocab.size();
    if (V == 0) throw ConfigError("embed_label_set: empty vocabulary");

    if (mode == LabelEmbedMode::sample) {
        Rng rng(seed);
        std::vector<TokenSequence> seqs;
        for (int64_t i = 0; i < V; ++i) {
            const auto& t = templates[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(templates.size()) - 1))];
            seqs.push_back(tokenizer.encode(fill_template(vocab.label(i), t), params.context_len));
        }
        return encode_text(seqs, params);
    }

    const auto K = static_cast<int64_t>(templates.size());
    std::vector<TokenSequence> seqs;
    for (int64_t i = 0; i < V; ++i)
        for (const auto& t : templates)
            seqs.push_back(tokenizer.encode(fill_template(vocab.label(i), t), params.context_len));
    Var all = encode_text(seqs, params);            // [V*K, d]
    Var unit = l2_normalize_rows(all);
    Var mean = mean_axis1(reshape(unit, {V, K, params.embed_dim}));
    return l2_normalize_rows(mean);
}

}  // namespace vtm
