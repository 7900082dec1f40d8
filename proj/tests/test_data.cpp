#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "support.hpp"

using namespace plip;
using namespace plip::data;

namespace {

PersonRecord two_span_record() {
    PersonRecord r;
    r.image_ref = "synthetic:16x8/1/1";
    r.identity = 3;
    r.captions = {{CaptionStyle::prompt, "a man in a red shirt and blue pants ."}};
    r.attributes.set("gender", "a man");
    r.attributes.set("upper-body", "a red shirt");
    r.attributes.set("lower-body", "blue pants");
    // tokens: a man in a red shirt and blue pants .
    //         0 1   2  3 4   5     6   7    8     9
    r.spans = {{{3, 6, "upper-body"}, {7, 9, "lower-body"}}};
    return r;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "plip_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("tokenizer splits punctuation and detokenize reattaches it") {
    std::vector<std::string> words;
    for (auto& t : tokenize("A man, wearing a t-shirt.")) words.push_back(t.text);
    CHECK(words == std::vector<std::string>{"A", "man", ",", "wearing", "a", "t-shirt", "."});
    CHECK(detokenize(words) == "A man, wearing a t-shirt.");
}

TEST_CASE("vocabulary reserves the special ids and round-trips") {
    const Vocabulary v({"red", "shirt", "red"});
    CHECK(v.size() == special::count + 2);
    CHECK(v.id("red") >= special::count);
    CHECK(v.id("zebra") == special::unk);
    const auto framed = v.encode_framed("red shirt", 10);
    CHECK(framed.ids.front() == special::bos);
    CHECK(framed.ids.back() == special::eos);
    CHECK(v.decode(framed) == "red shirt");
    CHECK(Vocabulary(v.words()) == v);

    bool cut = false;
    const auto t = v.encode_framed("red shirt red shirt red", 4, &cut);
    CHECK(cut);
    CHECK(t.size() == 4);
    CHECK(t.ids.back() == special::eos);
}

TEST_CASE("token sequence invariants") {
    TokenSequence s{{special::bos, 6, special::pad, 5}};
    CHECK_THROWS_AS(s.validate(10, 8), DataError);  // PAD before the end
    TokenSequence t{{special::bos, 12}};
    CHECK_THROWS_AS(t.validate(10, 8), DataError);  // id outside vocab
    TokenSequence u{{special::bos, 6, 7, special::eos}};
    CHECK_THROWS_AS(u.validate(10, 3), DataError);  // too long
    CHECK_NOTHROW(u.validate(10, 4));
    TokenSequence p{{special::bos, 6, special::pad, special::pad}};
    CHECK(p.length() == 2);
}

TEST_CASE("grayscale uses BT.601 luma") {
    Tensor img({3, 1, 3});
    const double px[3][3] = {{0.5, 0.5, 0.5}, {1, 1, 1}, {1, 0, 0}};
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) img.at({c, 0, i}) = px[i][c];
    const Tensor g = to_grayscale(img);
    CHECK(g.shape() == Shape{1, 1, 3});
    CHECK(g.at({0, 0, 0}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.at({0, 0, 1}) == doctest::Approx(1.0).epsilon(1e-15));
    // independent evaluation: the red weight alone
    CHECK(g.at({0, 0, 2}) == doctest::Approx(299.0 / 1000.0).epsilon(1e-15));

    img.at({0, 0, 0}) = 1.5;
    CHECK_THROWS_AS(to_grayscale(img), NumericError);
}

TEST_CASE("grayscale properties over random images") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor img({3, 2, 2});
        for (auto& v : img.values()) v = u(rng);
        const Tensor g = to_grayscale(img);
        // equal channels map to that value
        Tensor flat({3, 2, 2});
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < 4; ++p) flat[static_cast<std::size_t>(c * 4 + p)] = img[static_cast<std::size_t>(p)];
        const Tensor gf = to_grayscale(flat);
        for (int p = 0; p < 4; ++p) CHECK(gf[static_cast<std::size_t>(p)] == doctest::Approx(img[static_cast<std::size_t>(p)]).epsilon(1e-14));
        // raising one channel never lowers the gray value
        Tensor up = img;
        const int c = trial % 3;
        for (int p = 0; p < 4; ++p) {
            auto& v = up[static_cast<std::size_t>(c * 4 + p)];
            v = std::min(1.0, v + 0.1);
        }
        const Tensor gu = to_grayscale(up);
        for (int p = 0; p < 4; ++p) CHECK(gu[static_cast<std::size_t>(p)] >= g[static_cast<std::size_t>(p)]);
    }
}

TEST_CASE("full-rate masking covers every span") {
    auto r = two_span_record();
    r.spans = {{{2, 4, "upper-body"}}};
    const auto vocab = Vocabulary::from_records({r});
    const auto m = mask_attribute_phrases(r, 0, 1.0, 7, vocab);
    CHECK(m.mask_positions == std::vector<std::int64_t>{2, 3});
    const auto src = vocab.encode(r.captions[0].text);
    CHECK(m.target_words == std::vector<std::int64_t>{src.ids[2], src.ids[3]});
    CHECK(m.tokens.ids[2] == special::mask);
    CHECK(m.restored() == src);
}

TEST_CASE("masking is deterministic and restorable") {
    const auto r = two_span_record();
    const auto vocab = Vocabulary::from_records({r});
    const auto src = vocab.encode(r.captions[0].text);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto a = mask_attribute_phrases(r, 0, 0.5, seed, vocab);
        CHECK(a == mask_attribute_phrases(r, 0, 0.5, seed, vocab));
        CHECK(a.restored() == src);
        CHECK(!a.mask_positions.empty());
        CHECK(std::is_sorted(a.mask_positions.begin(), a.mask_positions.end()));
        CHECK(std::adjacent_find(a.mask_positions.begin(), a.mask_positions.end()) == a.mask_positions.end());
        for (auto p : a.mask_positions) CHECK(((p >= 3 && p < 6) || (p >= 7 && p < 9)));
        const auto f = a.framed();
        CHECK(f.tokens.ids.front() == special::bos);
        for (std::size_t k = 0; k < a.mask_positions.size(); ++k) CHECK(f.mask_positions[k] == a.mask_positions[k] + 1);
    }
}

TEST_CASE("masking selection frequency") {
    // Each span is drawn with probability r and one span is forced when none is drawn:
    // the marginal rate is r + (1-r)^n / n, and both spans are masked only by two
    // natural draws, i.e. with probability r^2.
    const auto r = two_span_record();
    const auto vocab = Vocabulary::from_records({r});
    const double rate = 0.5;
    const int n = 10000;
    int first = 0, second = 0, both = 0;
    for (int seed = 0; seed < n; ++seed) {
        const auto m = mask_attribute_phrases(r, 0, rate, static_cast<std::uint64_t>(seed), vocab);
        const auto& p = m.mask_positions;
        const bool a = std::find(p.begin(), p.end(), 3) != p.end();
        const bool b = std::find(p.begin(), p.end(), 7) != p.end();
        first += a;
        second += b;
        both += a && b;
    }
    const double marginal = rate + std::pow(1 - rate, 2) / 2;
    CHECK(std::abs(first / double(n) - marginal) < 0.02);
    CHECK(std::abs(second / double(n) - marginal) < 0.02);
    CHECK(std::abs(both / double(n) - rate * rate) < 0.02);
}

TEST_CASE("masking rejects captions without spans and bad rates") {
    auto r = two_span_record();
    const auto vocab = Vocabulary::from_records({r});
    CHECK_THROWS_AS(mask_attribute_phrases(r, 0, 0.0, 1, vocab), ConfigError);
    CHECK_THROWS_AS(mask_attribute_phrases(r, 0, 1.5, 1, vocab), ConfigError);
    CHECK_THROWS_AS(mask_attribute_phrases(r, 1, 0.5, 1, vocab), DataError);
    r.spans = {{}};
    CHECK_THROWS_AS(mask_attribute_phrases(r, 0, 0.5, 1, vocab), DataError);
}

TEST_CASE("prompt filling") {
    const SlotSchema schema({"gender", "head", "upper", "lower", "footwear", "belongings"});
    AttributeSet a(schema);
    a.set("upper", "a white shirt");
    a.set("lower", "blue jeans");
    const PromptTemplate t("t0", "A person wearing {upper} and {lower}.");
    CHECK(t.required_slots() == std::vector<std::string>{"upper", "lower"});
    CHECK(fill_prompt(t, a) == "A person wearing a white shirt and blue jeans.");

    const auto tracked = fill_prompt_tracked(t, a);
    for (const auto& s : tracked.slots)
        CHECK(tracked.text.substr(s.begin, s.end - s.begin) == a.get(s.slot));
    const auto spans = spans_from_filled(tracked);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].start == 3);
    CHECK(spans[0].end == 6);

    a.set("lower", "");
    CHECK_THROWS_AS(fill_prompt(t, a), DataError);
    CHECK_THROWS_AS(PromptTemplate("bad", "oops {upper"), ConfigError);
}

TEST_CASE("template choice is deterministic") {
    const auto lib = default_template_library(CaptionStyle::prompt);
    REQUIRE(lib.size() == 5);
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(choose_template(lib, s).id() == choose_template(lib, s).id());
    std::set<std::string> seen;
    for (std::uint64_t s = 0; s < 200; ++s) seen.insert(choose_template(lib, s).id());
    CHECK(seen.size() == 5);
}

TEST_CASE("filled prompts contain every attribute string") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto attrs = describe(sample_traits(seed));
        for (auto style : {CaptionStyle::spac_style_1, CaptionStyle::spac_style_2, CaptionStyle::prompt})
            for (const auto& t : default_template_library(style)) {
                const auto text = fill_prompt(t, attrs);
                for (const auto& slot : t.required_slots()) CHECK(text.find(attrs.get(slot)) != std::string::npos);
            }
    }
}

TEST_CASE("synthetic manifests") {
    const auto one = synth_manifest(1, 1, 5);
    REQUIRE(one.size() == 1);
    CHECK_NOTHROW(validate_record(one[0]));

    const auto recs = synth_manifest(10, 4, 5);
    CHECK(recs.size() == 40);
    std::map<std::int64_t, AttributeSet> attrs;
    for (const auto& r : recs) {
        CHECK_NOTHROW(validate_record(r));
        CHECK(r.captions.size() == 3);
        auto [it, fresh] = attrs.emplace(r.identity, r.attributes);
        if (!fresh) CHECK(it->second == r.attributes);
        // spans point at the attribute text
        for (std::size_t c = 0; c < r.captions.size(); ++c) {
            const auto toks = tokenize(r.captions[c].text);
            for (const auto& s : r.spans[c]) {
                std::vector<std::string> got, want;
                for (auto i = s.start; i < s.end; ++i) got.push_back(toks[static_cast<std::size_t>(i)].text);
                for (auto& t : tokenize(r.attributes.get(s.slot))) want.push_back(t.text);
                CHECK(got == want);
            }
        }
    }
    CHECK(attrs.size() == 10);

    std::string a, b;
    for (const auto& r : recs) a += manifest_line(r) + "\n";
    for (const auto& r : synth_manifest(10, 4, 5)) b += manifest_line(r) + "\n";
    CHECK(a == b);
    CHECK_THROWS_AS(synth_manifest(0, 1, 1), ConfigError);
}

TEST_CASE("manifest round trip and errors") {
    const auto path = temp_path("roundtrip.jsonl");
    const auto recs = synth_manifest(2, 1, 9);
    write_manifest(path, recs);
    const auto back = load_manifest(path);
    CHECK(back == recs);
    CHECK(back[1].identity == recs[1].identity);

    {
        std::ofstream(temp_path("empty.jsonl")) << "";
    }
    CHECK(load_manifest(temp_path("empty.jsonl")).empty());

    auto bad = recs[0];
    bad.spans[0] = {{1, 4, "upper-body"}, {3, 5, "lower-body"}};
    const auto line = manifest_line(recs[0]) + "\n" + manifest_line(bad) + "\n";
    try {
        parse_manifest(line);
        FAIL("overlapping spans accepted");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        parse_manifest("{not json\n");
        FAIL("malformed line accepted");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
}

TEST_CASE("synthetic images render deterministically in range") {
    const auto uri = synthetic_uri(4, 2, 16, 8);
    const Tensor a = render_synthetic_uri(uri), b = load_image(uri);
    CHECK(a.shape() == Shape{3, 16, 8});
    CHECK(a == b);
    for (double v : a.values()) CHECK((v >= 0 && v <= 1));
    CHECK_FALSE(render_synthetic_uri(synthetic_uri(4, 3, 16, 8)) == a);
}

TEST_CASE("ppm round trip") {
    const Tensor img = render_synthetic_uri(synthetic_uri(1, 1, 8, 4));
    const auto path = temp_path("img.ppm");
    write_ppm(path, img);
    const Tensor back = load_image(path.filename().string(), path.parent_path());
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("schema must have six unique slots") {
    CHECK_THROWS_AS(SlotSchema({"a", "b"}), ConfigError);
    CHECK_THROWS_AS(SlotSchema({"a", "a", "b", "c", "d", "e"}), ConfigError);
    AttributeSet s;
    CHECK_THROWS_AS(s.get("nope"), DataError);
}
