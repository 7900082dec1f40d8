#include "plip/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>

namespace plip::data {

const std::vector<NamedColor>& clothing_palette() {
    static const std::vector<NamedColor> palette{
        {"red", {0.85, 0.10, 0.10}},    {"green", {0.10, 0.65, 0.20}}, {"blue", {0.10, 0.25, 0.85}},
        {"yellow", {0.95, 0.85, 0.10}}, {"black", {0.08, 0.08, 0.08}}, {"white", {0.95, 0.95, 0.95}},
        {"gray", {0.50, 0.50, 0.50}},   {"orange", {0.95, 0.50, 0.05}}, {"purple", {0.50, 0.15, 0.65}},
        {"pink", {0.95, 0.55, 0.70}},   {"brown", {0.45, 0.28, 0.12}},
    };
    return palette;
}

const std::vector<NamedColor>& hair_palette() {
    static const std::vector<NamedColor> palette{
        {"black", {0.07, 0.06, 0.05}},
        {"brown", {0.35, 0.20, 0.10}},
        {"blond", {0.90, 0.78, 0.40}},
        {"gray", {0.62, 0.62, 0.62}},
    };
    return palette;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word
    std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

PersonTraits sample_traits(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    const std::size_t nc = clothing_palette().size();
    PersonTraits t;
    t.female = pick(2) == 1;
    t.headwear = pick(3) == 0 ? Headwear::hat : Headwear::hair;
    t.hair_color = pick(hair_palette().size());
    t.hat_color = pick(nc);
    t.upper = static_cast<UpperGarment>(pick(3));
    t.upper_color = pick(nc);
    t.lower = static_cast<LowerGarment>(pick(3));
    t.lower_color = pick(nc);
    t.footwear = static_cast<Footwear>(pick(2));
    t.footwear_color = pick(nc);
    t.bag = static_cast<Bag>(pick(3));
    t.bag_color = pick(nc);
    return t;
}

AttributeSet describe(const PersonTraits& t, const SlotSchema& schema) {
    const auto& pal = clothing_palette();
    auto color = [&pal](std::size_t i) { return std::string(pal[i].name); };
    auto name = [&schema](std::size_t i) { return schema.names()[i]; };
    AttributeSet a(schema);
    a.set(name(0), t.female ? "a woman" : "a man");
    if (t.headwear == Headwear::hat) {
        a.set(name(1), "a " + color(t.hat_color) + " hat");
    } else {
        a.set(name(1), std::string(t.female ? "long " : "short ") + std::string(hair_palette()[t.hair_color].name) + " hair");
    }
    static constexpr std::array<std::string_view, 3> upper{"t-shirt", "shirt", "jacket"};
    a.set(name(2), "a " + color(t.upper_color) + " " + std::string(upper[static_cast<std::size_t>(t.upper)]));
    switch (t.lower) {
        case LowerGarment::pants: a.set(name(3), color(t.lower_color) + " pants"); break;
        case LowerGarment::shorts: a.set(name(3), color(t.lower_color) + " shorts"); break;
        case LowerGarment::skirt: a.set(name(3), "a " + color(t.lower_color) + " skirt"); break;
    }
    a.set(name(4), color(t.footwear_color) + (t.footwear == Footwear::boots ? " boots" : " shoes"));
    static constexpr std::array<std::string_view, 3> bags{"backpack", "handbag", "shoulder bag"};
    a.set(name(5), "a " + color(t.bag_color) + " " + std::string(bags[static_cast<std::size_t>(t.bag)]));
    return a;
}

namespace {

struct Box {
    double x0, x1, y0, y1;
    bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

Rgb scaled(Rgb c, double s) { return {c.r * s, c.g * s, c.b * s}; }

// Color at reference-frame coordinates (x in [0,32), y in [0,64)); painter's order.
Rgb shade(const PersonTraits& t, double x, double y, Rgb background, Rgb skin) {
    const auto& pal = clothing_palette();
    const Rgb upper = pal[t.upper_color].rgb;
    const Rgb lower = pal[t.lower_color].rgb;
    const Rgb feet = pal[t.footwear_color].rgb;
    const Rgb bag = pal[t.bag_color].rgb;
    const Rgb hair = hair_palette()[t.hair_color].rgb;

    Rgb c = background;
    const Box left_leg{10.5, 15.5, 35, 57}, right_leg{16.5, 21.5, 35, 57};
    const bool on_leg = left_leg.contains(x, y) || right_leg.contains(x, y);
    switch (t.lower) {
        case LowerGarment::pants:
            if (on_leg) c = lower;
            break;
        case LowerGarment::shorts:
            if (on_leg) c = y < 44 ? lower : skin;
            break;
        case LowerGarment::skirt: {
            double frac = std::clamp((y - 35.0) / 12.0, 0.0, 1.0);
            double half = 6.0 + 2.5 * frac;
            if (y >= 35 && y < 47 && std::abs(x - 16.0) < half) c = lower;
            else if ((Box{11.5, 15, 47, 57}.contains(x, y) || Box{17, 20.5, 47, 57}.contains(x, y))) c = skin;
            break;
        }
    }
    const double shoe_top = t.footwear == Footwear::boots ? 49.0 : 56.0;
    if (Box{9.5, 15.5, shoe_top, 60}.contains(x, y) || Box{16.5, 22.5, shoe_top, 60}.contains(x, y)) c = feet;

    if (Box{9, 23, 15, 35}.contains(x, y)) {
        c = upper;
        if (t.upper == UpperGarment::jacket && std::abs(x - 16.0) < 0.75) c = scaled(upper, 0.55);
    }
    if (Box{5, 9, 15, 33}.contains(x, y) || Box{23, 27, 15, 33}.contains(x, y)) {
        double sleeve_end = t.upper == UpperGarment::tshirt ? 21.0 : (t.upper == UpperGarment::shirt ? 29.0 : 33.0);
        c = y < sleeve_end ? upper : skin;
    }
    if (Box{14, 18, 12.5, 15}.contains(x, y)) c = skin;

    const double hx = (x - 16.0) / 4.5, hy = (y - 8.5) / 5.5;
    if (hx * hx + hy * hy < 1.0) c = (t.headwear == Headwear::hair && y < 6.0) ? hair : skin;
    if (t.headwear == Headwear::hair && t.female &&
        (Box{10.5, 12.2, 6, 19}.contains(x, y) || Box{19.8, 21.5, 6, 19}.contains(x, y))) {
        c = hair;
    }
    if (t.headwear == Headwear::hat) {
        const Rgb hat = pal[t.hat_color].rgb;
        if (Box{10.5, 21.5, 1.5, 5.2}.contains(x, y) || Box{8.5, 23.5, 5.2, 6.6}.contains(x, y)) c = hat;
    }

    switch (t.bag) {
        case Bag::backpack:
            if (Box{23, 28.5, 16, 31}.contains(x, y)) c = bag;
            break;
        case Bag::handbag:
            if (Box{25, 30, 33, 40}.contains(x, y)) c = bag;
            break;
        case Bag::shoulder_bag:
            if (Box{2.5, 8.5, 27, 35}.contains(x, y)) c = bag;
            if (std::abs((x - 9.0) + (y - 15.0) * 0.3) < 0.6 && y >= 15 && y < 27) c = scaled(bag, 0.8);
            break;
    }
    return c;
}

}  // namespace

Tensor render_person(const PersonTraits& traits, std::uint64_t view_seed, std::int64_t height, std::int64_t width) {
    if (height <= 0 || width <= 0) throw ConfigError("render_person: non-positive image size");
    std::mt19937_64 rng(view_seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double dx = -2.0 + 4.0 * u(rng);
    const double dy = -1.5 + 3.0 * u(rng);
    const double s = 0.95 + 0.1 * u(rng);
    const double light = 0.85 + 0.25 * u(rng);
    const double bg_level = 0.55 + 0.3 * u(rng);
    const Rgb background{bg_level + 0.06 * (u(rng) - 0.5), bg_level + 0.06 * (u(rng) - 0.5), bg_level + 0.06 * (u(rng) - 0.5)};
    const double skin_shift = 0.05 * (u(rng) - 0.5);
    const Rgb skin{0.87 + skin_shift, 0.72 + skin_shift, 0.60 + skin_shift};
    std::normal_distribution<double> noise(0.0, 0.02);

    Tensor img(Shape{3, height, width});
    const std::int64_t plane = height * width;
    for (std::int64_t py = 0; py < height; ++py) {
        for (std::int64_t px = 0; px < width; ++px) {
            double yr = (static_cast<double>(py) + 0.5) * 64.0 / static_cast<double>(height);
            double xr = (static_cast<double>(px) + 0.5) * 32.0 / static_cast<double>(width);
            double x = (xr - 16.0 - dx) / s + 16.0;
            double y = (yr - 32.0 - dy) / s + 32.0;
            Rgb c = shade(traits, x, y, background, skin);
            const double ch[3] = {c.r, c.g, c.b};
            for (int k = 0; k < 3; ++k) {
                double v = std::clamp(ch[k] * light + noise(rng), 0.0, 1.0);
                img[static_cast<std::size_t>(k * plane + py * width + px)] = v;
            }
        }
    }
    return img;
}

std::string synthetic_uri(std::uint64_t traits_seed, std::uint64_t view_seed, std::int64_t height, std::int64_t width) {
    return "synthetic:" + std::to_string(height) + "x" + std::to_string(width) + "/" + std::to_string(traits_seed) + "/" +
           std::to_string(view_seed);
}

Tensor render_synthetic_uri(std::string_view uri) {
    const std::string_view prefix = "synthetic:";
    auto fail = [&]() { return DataError("malformed synthetic image reference '" + std::string(uri) + "'"); };
    if (uri.substr(0, prefix.size()) != prefix) throw fail();
    std::string_view rest = uri.substr(prefix.size());
    auto parse_u64 = [&](std::string_view s) {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) throw fail();
        return v;
    };
    auto slash1 = rest.find('/');
    auto slash2 = rest.find('/', slash1 == std::string_view::npos ? 0 : slash1 + 1);
    if (slash1 == std::string_view::npos || slash2 == std::string_view::npos) throw fail();
    std::string_view size = rest.substr(0, slash1);
    auto xpos = size.find('x');
    if (xpos == std::string_view::npos) throw fail();
    auto h = static_cast<std::int64_t>(parse_u64(size.substr(0, xpos)));
    auto w = static_cast<std::int64_t>(parse_u64(size.substr(xpos + 1)));
    std::uint64_t traits_seed = parse_u64(rest.substr(slash1 + 1, slash2 - slash1 - 1));
    std::uint64_t view_seed = parse_u64(rest.substr(slash2 + 1));
    if (h <= 0 || w <= 0 || h > 4096 || w > 4096) throw fail();
    return render_person(sample_traits(traits_seed), view_seed, h, w);
}

std::vector<PromptTemplate> default_template_library(CaptionStyle style) {
    std::vector<std::string> texts;
    std::string prefix;
    switch (style) {
        case CaptionStyle::spac_style_1:
            prefix = "style1";
            texts = {
                "The person is {gender} with {head}, wearing {upper-body}, {lower-body} and {footwear}, carrying {belongings}.",
                "There is {gender} with {head} in {upper-body} and {lower-body}, wearing {footwear} and carrying {belongings}.",
            };
            break;
        case CaptionStyle::spac_style_2:
            prefix = "style2";
            texts = {
                "This is {gender}. The person has {head} and wears {upper-body} with {lower-body}. The person also wears {footwear} and carries {belongings}.",
                "The pedestrian is {gender} wearing {upper-body} and {lower-body}. The pedestrian has {head}, {footwear} and {belongings}.",
            };
            break;
        case CaptionStyle::prompt:
            prefix = "prompt";
            texts = {
                "A photo of {gender} with {head}, wearing {upper-body}, {lower-body} and {footwear}, carrying {belongings}.",
                "In the picture there is {gender} who has {head}, dressed in {upper-body} and {lower-body}, with {footwear} and {belongings}.",
                "An image of {gender}: {head}, {upper-body}, {lower-body}, {footwear} and {belongings}.",
                "The image shows {gender} wearing {upper-body}, {lower-body} and {footwear}, with {head} and {belongings}.",
                "Here is {gender} in {upper-body} and {lower-body} with {footwear}; the person has {head} and {belongings}.",
            };
            break;
    }
    std::vector<PromptTemplate> out;
    for (std::size_t i = 0; i < texts.size(); ++i) out.emplace_back(prefix + "-" + std::to_string(i), texts[i]);
    return out;
}

namespace {

// Default templates use the default slot names; rewrite them for a custom schema.
PromptTemplate rename_slots(const PromptTemplate& t, const SlotSchema& schema) {
    const SlotSchema defaults;
    if (schema == defaults) return t;
    std::string text = t.text();
    for (std::size_t i = 0; i < SlotSchema::kSlotCount; ++i) {
        const std::string from = "{" + defaults.names()[i] + "}";
        const std::string to = "{\x01" + std::to_string(i) + "}";
        for (auto p = text.find(from); p != std::string::npos; p = text.find(from, p + to.size())) text.replace(p, from.size(), to);
    }
    for (std::size_t i = 0; i < SlotSchema::kSlotCount; ++i) {
        const std::string from = "{\x01" + std::to_string(i) + "}";
        const std::string to = "{" + schema.names()[i] + "}";
        for (auto p = text.find(from); p != std::string::npos; p = text.find(from, p + to.size())) text.replace(p, from.size(), to);
    }
    return PromptTemplate(t.id(), text);
}

}  // namespace

std::vector<PersonRecord> synth_manifest(std::int64_t n_identities, std::int64_t imgs_per_id, std::uint64_t rng_seed,
                                         const SynthOptions& options) {
    if (n_identities < 1) throw ConfigError("synth_manifest needs at least one identity");
    if (imgs_per_id < 1) throw ConfigError("synth_manifest needs at least one image per identity");
    const std::array<CaptionStyle, 3> styles{CaptionStyle::spac_style_1, CaptionStyle::spac_style_2, CaptionStyle::prompt};
    std::array<std::vector<PromptTemplate>, 3> libraries;
    for (std::size_t s = 0; s < styles.size(); ++s)
        for (const auto& t : default_template_library(styles[s])) libraries[s].push_back(rename_slots(t, options.schema));

    std::vector<PersonRecord> out;
    out.reserve(static_cast<std::size_t>(n_identities * imgs_per_id));
    for (std::int64_t id = 0; id < n_identities; ++id) {
        const std::uint64_t traits_seed = mix_seed(rng_seed, static_cast<std::uint64_t>(id));
        const PersonTraits traits = sample_traits(traits_seed);
        const AttributeSet attrs = describe(traits, options.schema);
        for (std::int64_t j = 0; j < imgs_per_id; ++j) {
            const std::uint64_t view_seed = mix_seed(traits_seed, static_cast<std::uint64_t>(j) + 1);
            PersonRecord rec;
            rec.image_ref = synthetic_uri(traits_seed, view_seed, options.height, options.width);
            rec.identity = id;
            rec.attributes = attrs;
            for (std::size_t s = 0; s < styles.size(); ++s) {
                const auto& tmpl = choose_template(libraries[s], mix_seed(view_seed, s));
                FilledPrompt filled = fill_prompt_tracked(tmpl, attrs);
                rec.spans.push_back(spans_from_filled(filled));
                rec.captions.push_back({styles[s], std::move(filled.text)});
            }
            validate_record(rec);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace plip::data
