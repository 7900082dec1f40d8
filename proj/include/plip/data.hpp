#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plip/tensor.hpp"

namespace plip::data {

enum class CaptionStyle { spac_style_1, spac_style_2, prompt };

std::string_view style_name(CaptionStyle s);
CaptionStyle parse_style(std::string_view name);

struct Caption {
    CaptionStyle style = CaptionStyle::prompt;
    std::string text;
    friend bool operator==(const Caption&, const Caption&) = default;
};

/// Half-open token range [start, end) of one attribute phrase inside a caption.
struct AttributeSpan {
    std::int64_t start = 0;
    std::int64_t end = 0;
    std::string slot;
    friend bool operator==(const AttributeSpan&, const AttributeSpan&) = default;
};

/// The six ordered slot names every AttributeSet in a dataset shares.
class SlotSchema {
public:
    static constexpr std::size_t kSlotCount = 6;

    SlotSchema();
    explicit SlotSchema(std::vector<std::string> names);

    const std::vector<std::string>& names() const noexcept { return names_; }
    std::optional<std::size_t> index_of(std::string_view slot) const;

    friend bool operator==(const SlotSchema&, const SlotSchema&) = default;

private:
    std::vector<std::string> names_;
};

class AttributeSet {
public:
    AttributeSet() : AttributeSet(SlotSchema{}) {}
    explicit AttributeSet(SlotSchema schema);

    const SlotSchema& schema() const noexcept { return schema_; }
    const std::string& get(std::string_view slot) const;
    void set(std::string_view slot, std::string text);
    const std::vector<std::string>& values() const noexcept { return values_; }

    friend bool operator==(const AttributeSet&, const AttributeSet&) = default;

private:
    SlotSchema schema_;
    std::vector<std::string> values_;
};

struct PersonRecord {
    std::string image_ref;
    std::int64_t identity = 0;
    std::vector<Caption> captions;
    AttributeSet attributes;
    /// spans[i] belongs to captions[i].
    std::vector<std::vector<AttributeSpan>> spans;

    friend bool operator==(const PersonRecord&, const PersonRecord&) = default;
};

// ---------------------------------------------------------------------------
// Tokenization

struct Token {
    std::string text;
    std::size_t begin = 0;  // byte offsets into the source text
    std::size_t end = 0;
};

/// Splits on whitespace and emits each punctuation character as its own token.
std::vector<Token> tokenize(std::string_view text);
/// Joins tokens with single spaces, attaching closing punctuation to the left.
std::string detokenize(const std::vector<std::string>& words);

namespace special {
inline constexpr std::int64_t pad = 0;
inline constexpr std::int64_t mask = 1;
inline constexpr std::int64_t bos = 2;
inline constexpr std::int64_t eos = 3;
inline constexpr std::int64_t unk = 4;
inline constexpr std::int64_t count = 5;
}  // namespace special

struct TokenSequence {
    std::vector<std::int64_t> ids;

    std::size_t size() const noexcept { return ids.size(); }
    /// Number of ids before the PAD suffix.
    std::size_t length() const noexcept;
    /// Throws DataError if any invariant is broken.
    void validate(std::int64_t vocab_size, std::size_t max_len) const;

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class Vocabulary {
public:
    Vocabulary();
    explicit Vocabulary(std::vector<std::string> words);

    static Vocabulary from_records(const std::vector<PersonRecord>& records);

    std::int64_t size() const noexcept { return static_cast<std::int64_t>(words_.size()); }
    std::int64_t id(std::string_view word) const;
    const std::string& word(std::int64_t id) const;
    const std::vector<std::string>& words() const noexcept { return words_; }

    /// Caption ids without special tokens.
    TokenSequence encode(std::string_view text) const;
    /// BOS + ids + EOS, truncated to max_len (EOS kept); sets *truncated when cut.
    TokenSequence encode_framed(std::string_view text, std::size_t max_len, bool* truncated = nullptr) const;
    /// Drops specials and stops at EOS.
    std::string decode(const TokenSequence& seq) const;

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

private:
    std::vector<std::string> words_;
    std::vector<std::pair<std::string, std::int64_t>> sorted_;
};

// ---------------------------------------------------------------------------
// Masking

struct MaskedCaption {
    TokenSequence tokens;
    std::vector<std::int64_t> mask_positions;
    std::vector<std::int64_t> target_words;

    /// Puts the targets back; yields the unmasked source sequence.
    TokenSequence restored() const;
    /// BOS/EOS framed copy with positions shifted to match.
    MaskedCaption framed() const;

    friend bool operator==(const MaskedCaption&, const MaskedCaption&) = default;
};

/// Masks whole attribute phrases of one caption. Each span is selected with
/// probability `rate`; if none is drawn, one span chosen uniformly is forced.
MaskedCaption mask_attribute_phrases(const PersonRecord& rec, std::size_t caption_index, double rate,
                                     std::uint64_t rng_seed, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Prompt templates

class PromptTemplate {
public:
    PromptTemplate(std::string id, std::string text);

    const std::string& id() const noexcept { return id_; }
    const std::string& text() const noexcept { return text_; }
    const std::vector<std::string>& required_slots() const noexcept { return required_; }

private:
    std::string id_;
    std::string text_;
    std::vector<std::string> required_;
};

/// Where one attribute string landed in filled text (byte offsets).
struct FilledSlot {
    std::string slot;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct FilledPrompt {
    std::string text;
    std::vector<FilledSlot> slots;
};

std::string fill_prompt(const PromptTemplate& tmpl, const AttributeSet& attrs);
FilledPrompt fill_prompt_tracked(const PromptTemplate& tmpl, const AttributeSet& attrs);

/// Maps byte ranges of filled slots onto token spans of the filled text.
std::vector<AttributeSpan> spans_from_filled(const FilledPrompt& filled);
/// Finds each non-empty attribute as a contiguous token run in the caption.
std::vector<AttributeSpan> locate_attribute_spans(std::string_view caption, const AttributeSet& attrs);

/// Uniform choice among templates from a seed.
const PromptTemplate& choose_template(const std::vector<PromptTemplate>& library, std::uint64_t seed);

/// One template per non-empty line; ids are "<prefix>-<line index>".
std::vector<PromptTemplate> load_template_library(const std::filesystem::path& path, const std::string& prefix);
void write_template_library(const std::filesystem::path& path, const std::vector<PromptTemplate>& library);

// ---------------------------------------------------------------------------
// Manifests

void validate_record(const PersonRecord& rec);

/// JSON Lines; blank lines are skipped. Also accepts caption-generator output
/// rows ({image, identity, style, caption, attributes}).
std::vector<PersonRecord> load_manifest(const std::filesystem::path& path, const SlotSchema& schema = {});
std::vector<PersonRecord> parse_manifest(std::string_view text, const SlotSchema& schema = {});
std::string manifest_line(const PersonRecord& rec);
void write_manifest(const std::filesystem::path& path, const std::vector<PersonRecord>& records);

// ---------------------------------------------------------------------------
// Images. Stored channel-first: [C, H, W] with values in [0, 1].

/// BT.601 luma; input [3, H, W], output [1, H, W].
Tensor to_grayscale(const Tensor& img);
/// Synthetic URIs are rendered; other refs are binary PPM/PGM files relative to base_dir.
Tensor load_image(const std::string& ref, const std::filesystem::path& base_dir = {});
void write_ppm(const std::filesystem::path& path, const Tensor& img);

}  // namespace plip::data
