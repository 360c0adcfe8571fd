#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vtm/autodiff.hpp"
#include "vtm/datamodel.hpp"
#include "vtm/params.hpp"
#include "vtm/transformer.hpp"

namespace vtm {

struct PromptTemplate {
    enum class Kind { prefix, cloze, suffix };
    Kind kind;
    std::string pattern;  // contains the slot marker exactly once
};

inline constexpr const char* kSlotMarker = "{label}";

// validates marker count and kind/slot-position consistency
PromptTemplate make_template(PromptTemplate::Kind kind, const std::string& pattern);
const char* template_kind_name(PromptTemplate::Kind kind);
PromptTemplate::Kind template_kind_from_name(const std::string& name);

std::string fill_template(const std::string& label, const PromptTemplate& tmpl);

// the shipped default set: 18 templates, six of each kind
std::vector<PromptTemplate> default_templates();
// degenerate set used when textual prompting is disabled: the bare label
std::vector<PromptTemplate> label_only_templates();

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::vector<PromptTemplate>& templates, const std::filesystem::path& path);

struct TokenSequence {
    std::vector<int64_t> ids;  // length = context_len
    int64_t eos_position = 0;
    int64_t length = 0;  // tokens before padding, = eos_position + 1
};

class Tokenizer {
public:
    static constexpr int64_t kPad = 0, kSos = 1, kEos = 2, kUnk = 3;

    Tokenizer() = default;
    // vocabulary over the whitespace-split lowercased corpus, sorted for determinism
    static Tokenizer build(const std::vector<std::string>& corpus);
    static Tokenizer build_for(const LabelVocabulary& vocab,
                               const std::vector<PromptTemplate>& templates);
    static Tokenizer from_lines(const std::vector<std::string>& lines);

    std::vector<std::string> lines() const { return words_; }
    int64_t size() const { return static_cast<int64_t>(words_.size()); }
    TokenSequence encode(const std::string& text, int64_t context_len) const;

private:
    std::vector<std::string> words_;  // index = token id; 0..3 are specials
};

struct TextEncoderParams {
    int64_t width = 0, heads = 0, context_len = 0, embed_dim = 0;
    Var token_emb, pos_emb;
    std::vector<BlockParams> blocks;
    Var ln_f_g, ln_f_b, proj;
};

TextEncoderParams make_text_encoder(ParamStore& store, int64_t vocab_size, int64_t width,
                                    int64_t layers, int64_t heads, int64_t context_len,
                                    int64_t embed_dim, Rng& rng);

// [N, embed_dim], rows not L2-normalized
Var encode_text(const std::vector<TokenSequence>& tokens, const TextEncoderParams& params);

enum class LabelEmbedMode { sample, ensemble };

// sample: one template per label per call (seeded); rows unnormalized.
// ensemble: per label, all templates encoded, normalized, averaged, re-normalized.
Var embed_label_set(const LabelVocabulary& vocab, const std::vector<PromptTemplate>& templates,
                    const Tokenizer& tokenizer, const TextEncoderParams& params,
                    LabelEmbedMode mode, uint64_t seed = 0);

}  // namespace vtm
