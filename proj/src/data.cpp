#include "plip/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "plip/synthetic.hpp"

namespace plip::data {

using json = nlohmann::json;

std::string_view style_name(CaptionStyle s) {
    switch (s) {
        case CaptionStyle::spac_style_1: return "spac_style_1";
        case CaptionStyle::spac_style_2: return "spac_style_2";
        case CaptionStyle::prompt: return "prompt";
    }
    return "prompt";
}

CaptionStyle parse_style(std::string_view name) {
    if (name == "spac_style_1") return CaptionStyle::spac_style_1;
    if (name == "spac_style_2") return CaptionStyle::spac_style_2;
    if (name == "prompt") return CaptionStyle::prompt;
    throw DataError("unknown caption style '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

SlotSchema::SlotSchema() : names_{"gender", "head", "upper-body", "lower-body", "footwear", "belongings"} {}

SlotSchema::SlotSchema(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() != kSlotCount) {
        throw ConfigError("attribute schema needs exactly 6 slots, got " + std::to_string(names_.size()));
    }
    std::set<std::string> uniq(names_.begin(), names_.end());
    if (uniq.size() != names_.size()) throw ConfigError("attribute slot names must be unique");
    for (const auto& n : names_)
        if (n.empty()) throw ConfigError("attribute slot names must be non-empty");
}

std::optional<std::size_t> SlotSchema::index_of(std::string_view slot) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == slot) return i;
    return std::nullopt;
}

AttributeSet::AttributeSet(SlotSchema schema) : schema_(std::move(schema)), values_(SlotSchema::kSlotCount) {}

const std::string& AttributeSet::get(std::string_view slot) const {
    auto i = schema_.index_of(slot);
    if (!i) throw DataError("unknown attribute slot '" + std::string(slot) + "'");
    return values_[*i];
}

void AttributeSet::set(std::string_view slot, std::string text) {
    auto i = schema_.index_of(slot);
    if (!i) throw DataError("unknown attribute slot '" + std::string(slot) + "'");
    values_[*i] = std::move(text);
}

// ---------------------------------------------------------------------------

namespace {

bool is_punct_char(char c) {
    switch (c) {
        case '.': case ',': case ';': case ':': case '!': case '?': case '(': case ')': case '"':
            return true;
        default:
            return false;
    }
}

bool attaches_left(const std::string& w) {
    return w == "." || w == "," || w == ";" || w == ":" || w == "!" || w == "?" || w == ")";
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (is_punct_char(text[i])) {
            out.push_back({std::string(1, text[i]), i, i + 1});
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && !is_punct_char(text[j])) ++j;
        out.push_back({std::string(text.substr(i, j - i)), i, j});
        i = j;
    }
    return out;
}

std::string detokenize(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0 && !attaches_left(words[i]) && words[i - 1] != "(") out += ' ';
        out += words[i];
    }
    return out;
}

std::size_t TokenSequence::length() const noexcept {
    std::size_t n = ids.size();
    while (n > 0 && ids[n - 1] == special::pad) --n;
    return n;
}

void TokenSequence::validate(std::int64_t vocab_size, std::size_t max_len) const {
    if (ids.size() > max_len) {
        throw DataError("token sequence of length " + std::to_string(ids.size()) + " exceeds maximum " +
                        std::to_string(max_len));
    }
    const std::size_t n = length();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_size) {
            throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                            std::to_string(vocab_size));
        }
        if (i < n && ids[i] == special::pad) throw DataError("PAD token before end of sequence");
    }
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) {
    words_ = {"[PAD]", "[MASK]", "[BOS]", "[EOS]", "[UNK]"};
    std::set<std::string> seen(words_.begin(), words_.end());
    for (auto& w : words) {
        if (seen.insert(w).second) words_.push_back(std::move(w));
    }
    sorted_.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) sorted_.emplace_back(words_[i], static_cast<std::int64_t>(i));
    std::sort(sorted_.begin(), sorted_.end());
}

Vocabulary Vocabulary::from_records(const std::vector<PersonRecord>& records) {
    std::set<std::string> words;
    for (const auto& r : records) {
        for (const auto& c : r.captions)
            for (auto& t : tokenize(c.text)) words.insert(std::move(t.text));
        for (const auto& a : r.attributes.values())
            for (auto& t : tokenize(a)) words.insert(std::move(t.text));
    }
    return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

std::int64_t Vocabulary::id(std::string_view word) const {
    auto it = std::lower_bound(sorted_.begin(), sorted_.end(), word,
                               [](const auto& e, std::string_view w) { return e.first < w; });
    if (it != sorted_.end() && it->first == word) return it->second;
    return special::unk;
}

const std::string& Vocabulary::word(std::int64_t id) const {
    if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    return words_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(std::string_view text) const {
    TokenSequence seq;
    for (const auto& t : tokenize(text)) seq.ids.push_back(id(t.text));
    return seq;
}

TokenSequence Vocabulary::encode_framed(std::string_view text, std::size_t max_len, bool* truncated) const {
    if (max_len < 2) throw ConfigError("framed sequences need max length >= 2");
    TokenSequence body = encode(text);
    TokenSequence seq;
    seq.ids.push_back(special::bos);
    const std::size_t room = max_len - 2;
    const bool cut = body.ids.size() > room;
    seq.ids.insert(seq.ids.end(), body.ids.begin(), body.ids.begin() + static_cast<std::ptrdiff_t>(std::min(room, body.ids.size())));
    seq.ids.push_back(special::eos);
    if (truncated) *truncated = cut;
    return seq;
}

std::string Vocabulary::decode(const TokenSequence& seq) const {
    std::vector<std::string> words;
    for (auto id : seq.ids) {
        if (id == special::eos) break;
        if (id == special::pad || id == special::bos) continue;
        words.push_back(word(id));
    }
    return detokenize(words);
}

// ---------------------------------------------------------------------------

TokenSequence MaskedCaption::restored() const {
    TokenSequence out = tokens;
    for (std::size_t i = 0; i < mask_positions.size(); ++i)
        out.ids[static_cast<std::size_t>(mask_positions[i])] = target_words[i];
    return out;
}

MaskedCaption MaskedCaption::framed() const {
    MaskedCaption out;
    out.tokens.ids.reserve(tokens.ids.size() + 2);
    out.tokens.ids.push_back(special::bos);
    out.tokens.ids.insert(out.tokens.ids.end(), tokens.ids.begin(), tokens.ids.end());
    out.tokens.ids.push_back(special::eos);
    for (auto p : mask_positions) out.mask_positions.push_back(p + 1);
    out.target_words = target_words;
    return out;
}

MaskedCaption mask_attribute_phrases(const PersonRecord& rec, std::size_t caption_index, double rate,
                                     std::uint64_t rng_seed, const Vocabulary& vocab) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("mask rate must lie in (0, 1], got " + std::to_string(rate));
    if (caption_index >= rec.captions.size()) {
        throw DataError("caption index " + std::to_string(caption_index) + " out of range for record of identity " +
                        std::to_string(rec.identity));
    }
    const auto& spans = caption_index < rec.spans.size() ? rec.spans[caption_index] : std::vector<AttributeSpan>{};
    if (spans.empty()) {
        throw DataError("caption " + std::to_string(caption_index) + " of identity " + std::to_string(rec.identity) +
                        " has no attribute spans; skip this sample for attribute prediction");
    }
    MaskedCaption out;
    out.tokens = vocab.encode(rec.captions[caption_index].text);

    std::mt19937_64 rng(rng_seed);
    std::bernoulli_distribution pick(rate);
    std::vector<bool> chosen(spans.size());
    bool any = false;
    for (std::size_t i = 0; i < spans.size(); ++i) any |= (chosen[i] = pick(rng));
    if (!any) {
        std::uniform_int_distribution<std::size_t> which(0, spans.size() - 1);
        chosen[which(rng)] = true;
    }
    std::vector<std::int64_t> positions;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (!chosen[i]) continue;
        for (auto p = spans[i].start; p < spans[i].end; ++p) positions.push_back(p);
    }
    std::sort(positions.begin(), positions.end());
    for (auto p : positions) {
        if (p < 0 || p >= static_cast<std::int64_t>(out.tokens.ids.size())) {
            throw DataError("attribute span outside caption tokens for identity " + std::to_string(rec.identity));
        }
        out.target_words.push_back(out.tokens.ids[static_cast<std::size_t>(p)]);
        out.tokens.ids[static_cast<std::size_t>(p)] = special::mask;
    }
    out.mask_positions = std::move(positions);
    return out;
}

// ---------------------------------------------------------------------------

PromptTemplate::PromptTemplate(std::string id, std::string text) : id_(std::move(id)), text_(std::move(text)) {
    std::size_t i = 0;
    while ((i = text_.find('{', i)) != std::string::npos) {
        auto j = text_.find('}', i);
        if (j == std::string::npos) throw ConfigError("template '" + id_ + "' has an unterminated placeholder");
        std::string name = text_.substr(i + 1, j - i - 1);
        if (name.empty() || name.find('{') != std::string::npos) {
            throw ConfigError("template '" + id_ + "' has a malformed placeholder");
        }
        if (std::find(required_.begin(), required_.end(), name) == required_.end()) required_.push_back(name);
        i = j + 1;
    }
    if (text_.find('}', 0) != std::string::npos && required_.empty()) {
        throw ConfigError("template '" + id_ + "' has a stray closing brace");
    }
}

FilledPrompt fill_prompt_tracked(const PromptTemplate& tmpl, const AttributeSet& attrs) {
    for (const auto& slot : tmpl.required_slots()) {
        if (!attrs.schema().index_of(slot)) {
            throw DataError("template '" + tmpl.id() + "' uses unknown slot '" + slot + "'");
        }
        if (attrs.get(slot).empty()) {
            throw DataError("template '" + tmpl.id() + "' requires slot '" + slot + "' which is empty");
        }
    }
    FilledPrompt out;
    const std::string& t = tmpl.text();
    std::size_t i = 0;
    while (i < t.size()) {
        auto open = t.find('{', i);
        if (open == std::string::npos) {
            out.text.append(t, i, std::string::npos);
            break;
        }
        out.text.append(t, i, open - i);
        auto close = t.find('}', open);
        std::string slot = t.substr(open + 1, close - open - 1);
        const std::string& value = attrs.get(slot);
        out.slots.push_back({slot, out.text.size(), out.text.size() + value.size()});
        out.text += value;
        i = close + 1;
    }
    return out;
}

std::string fill_prompt(const PromptTemplate& tmpl, const AttributeSet& attrs) {
    return fill_prompt_tracked(tmpl, attrs).text;
}

std::vector<AttributeSpan> spans_from_filled(const FilledPrompt& filled) {
    auto tokens = tokenize(filled.text);
    std::vector<AttributeSpan> spans;
    for (const auto& s : filled.slots) {
        std::int64_t first = -1, last = -1;
        for (std::size_t k = 0; k < tokens.size(); ++k) {
            if (tokens[k].begin >= s.begin && tokens[k].end <= s.end) {
                if (first < 0) first = static_cast<std::int64_t>(k);
                last = static_cast<std::int64_t>(k);
            } else if (tokens[k].begin < s.end && tokens[k].end > s.begin) {
                throw DataError("attribute '" + s.slot + "' does not fall on token boundaries");
            }
        }
        if (first >= 0) spans.push_back({first, last + 1, s.slot});
    }
    std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    return spans;
}

std::vector<AttributeSpan> locate_attribute_spans(std::string_view caption, const AttributeSet& attrs) {
    auto tokens = tokenize(caption);
    std::vector<bool> used(tokens.size(), false);
    std::vector<AttributeSpan> spans;
    const auto& names = attrs.schema().names();
    for (std::size_t s = 0; s < names.size(); ++s) {
        auto needle = tokenize(attrs.values()[s]);
        if (needle.empty() || needle.size() > tokens.size()) continue;
        for (std::size_t k = 0; k + needle.size() <= tokens.size(); ++k) {
            bool ok = true;
            for (std::size_t j = 0; j < needle.size() && ok; ++j)
                ok = !used[k + j] && tokens[k + j].text == needle[j].text;
            if (!ok) continue;
            for (std::size_t j = 0; j < needle.size(); ++j) used[k + j] = true;
            spans.push_back({static_cast<std::int64_t>(k), static_cast<std::int64_t>(k + needle.size()), names[s]});
            break;
        }
    }
    std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    return spans;
}

const PromptTemplate& choose_template(const std::vector<PromptTemplate>& library, std::uint64_t seed) {
    if (library.empty()) throw ConfigError("template library is empty");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, library.size() - 1);
    return library[pick(rng)];
}

std::vector<PromptTemplate> load_template_library(const std::filesystem::path& path, const std::string& prefix) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open template library " + path.string());
    std::vector<PromptTemplate> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        out.emplace_back(prefix + "-" + std::to_string(out.size()), line);
    }
    return out;
}

void write_template_library(const std::filesystem::path& path, const std::vector<PromptTemplate>& library) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write template library " + path.string());
    for (const auto& t : library) out << t.text() << '\n';
}

// ---------------------------------------------------------------------------

void validate_record(const PersonRecord& rec) {
    const std::string who = "record of identity " + std::to_string(rec.identity);
    if (rec.identity < 0) throw DataError("negative identity " + std::to_string(rec.identity));
    if (rec.captions.empty() || rec.captions.size() > 3) {
        throw DataError(who + " has " + std::to_string(rec.captions.size()) + " captions (expected 1 to 3)");
    }
    if (rec.spans.size() != rec.captions.size()) throw DataError(who + ": span lists do not match caption count");
    for (std::size_t c = 0; c < rec.captions.size(); ++c) {
        const auto n = static_cast<std::int64_t>(tokenize(rec.captions[c].text).size());
        auto spans = rec.spans[c];
        std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
        std::int64_t prev_end = 0;
        for (const auto& s : spans) {
            if (s.start < 0 || s.end > n || s.start >= s.end) {
                throw DataError(who + ": span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                ") out of range for caption " + std::to_string(c) + " with " + std::to_string(n) +
                                " tokens");
            }
            if (s.start < prev_end) throw DataError(who + ": overlapping attribute spans in caption " + std::to_string(c));
            if (!rec.attributes.schema().index_of(s.slot)) throw DataError(who + ": span names unknown slot '" + s.slot + "'");
            prev_end = s.end;
        }
    }
}

namespace {

PersonRecord record_from_json(const json& j, const SlotSchema& schema) {
    PersonRecord rec;
    rec.attributes = AttributeSet(schema);
    rec.image_ref = j.at("image").get<std::string>();
    rec.identity = j.at("identity").get<std::int64_t>();
    if (j.contains("attributes")) {
        for (const auto& [k, v] : j.at("attributes").items()) rec.attributes.set(k, v.get<std::string>());
    }
    if (j.contains("captions")) {
        for (const auto& c : j.at("captions"))
            rec.captions.push_back({parse_style(c.at("style").get<std::string>()), c.at("text").get<std::string>()});
    } else if (j.contains("caption")) {
        rec.captions.push_back({parse_style(j.value("style", std::string("spac_style_1"))), j.at("caption").get<std::string>()});
    }
    rec.spans.assign(rec.captions.size(), {});
    if (j.contains("spans")) {
        for (const auto& s : j.at("spans")) {
            auto ci = s.at("caption_index").get<std::int64_t>();
            if (ci < 0 || ci >= static_cast<std::int64_t>(rec.captions.size())) {
                throw DataError("span caption_index " + std::to_string(ci) + " out of range for identity " +
                                std::to_string(rec.identity));
            }
            rec.spans[static_cast<std::size_t>(ci)].push_back(
                {s.at("start").get<std::int64_t>(), s.at("end").get<std::int64_t>(), s.at("slot").get<std::string>()});
        }
    } else {
        for (std::size_t c = 0; c < rec.captions.size(); ++c)
            rec.spans[c] = locate_attribute_spans(rec.captions[c].text, rec.attributes);
    }
    return rec;
}

json record_to_json(const PersonRecord& rec) {
    json j;
    j["image"] = rec.image_ref;
    j["identity"] = rec.identity;
    j["captions"] = json::array();
    for (const auto& c : rec.captions) j["captions"].push_back({{"style", style_name(c.style)}, {"text", c.text}});
    json attrs = json::object();
    const auto& names = rec.attributes.schema().names();
    for (std::size_t i = 0; i < names.size(); ++i) attrs[names[i]] = rec.attributes.values()[i];
    j["attributes"] = attrs;
    j["spans"] = json::array();
    for (std::size_t c = 0; c < rec.spans.size(); ++c)
        for (const auto& s : rec.spans[c])
            j["spans"].push_back({{"caption_index", c}, {"start", s.start}, {"end", s.end}, {"slot", s.slot}});
    return j;
}

}  // namespace

std::vector<PersonRecord> parse_manifest(std::string_view text, const SlotSchema& schema) {
    std::vector<PersonRecord> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        PersonRecord rec;
        try {
            rec = record_from_json(json::parse(line), schema);
        } catch (const json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": parse error: " + e.what());
        } catch (const DataError& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            validate_record(rec);
        } catch (const DataError& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": validation error: " + e.what());
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<PersonRecord> load_manifest(const std::filesystem::path& path, const SlotSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), schema);
}

std::string manifest_line(const PersonRecord& rec) { return record_to_json(rec).dump(); }

void write_manifest(const std::filesystem::path& path, const std::vector<PersonRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    for (const auto& r : records) out << manifest_line(r) << '\n';
}

// ---------------------------------------------------------------------------

Tensor to_grayscale(const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("to_grayscale expects [3,H,W], got " + shape_string(img.shape()));
    const std::int64_t h = img.dim(1), w = img.dim(2), s = h * w;
    Tensor out(Shape{1, h, w});
    for (std::int64_t i = 0; i < s; ++i) {
        double r = img[static_cast<std::size_t>(i)], g = img[static_cast<std::size_t>(s + i)],
               b = img[static_cast<std::size_t>(2 * s + i)];
        for (double v : {r, g, b})
            if (!(v >= 0.0 && v <= 1.0)) throw NumericError("to_grayscale: pixel value outside [0,1]");
        out[static_cast<std::size_t>(i)] = std::clamp(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0);
    }
    return out;
}

namespace {

std::string next_ppm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok += c;
    }
    return tok;
}

Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path.string());
    std::string magic = next_ppm_token(in);
    if (magic != "P6" && magic != "P5") throw DataError("unsupported image format in " + path.string());
    const std::int64_t channels = magic == "P6" ? 3 : 1;
    std::int64_t w = std::stoll(next_ppm_token(in)), h = std::stoll(next_ppm_token(in));
    double maxval = std::stod(next_ppm_token(in));
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw DataError("bad image header in " + path.string());
    std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * channels));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError("truncated image " + path.string());
    Tensor t(Shape{channels, h, w});
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t c = 0; c < channels; ++c)
                t[static_cast<std::size_t>((c * h + y) * w + x)] =
                    raw[static_cast<std::size_t>((y * w + x) * channels + c)] / maxval;
    return t;
}

}  // namespace

Tensor load_image(const std::string& ref, const std::filesystem::path& base_dir) {
    if (ref.rfind("synthetic:", 0) == 0) return render_synthetic_uri(ref);
    std::filesystem::path p(ref);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return read_pnm(p);
}

void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1)) throw ShapeError("write_ppm expects [1|3,H,W]");
    const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image " + path.string());
    out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double v = std::clamp(img[static_cast<std::size_t>((ch * h + y) * w + x)], 0.0, 1.0);
                out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
            }
}

}  // namespace plip::data
