#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "plip/data.hpp"

// Procedural toy pedestrians: colored clothing regions on a small canvas,
// with attribute text that names exactly what was drawn.

namespace plip::data {

struct Rgb {
    double r, g, b;
};

struct NamedColor {
    std::string_view name;
    Rgb rgb;
};

const std::vector<NamedColor>& clothing_palette();
const std::vector<NamedColor>& hair_palette();

enum class Headwear { hair, hat };
enum class UpperGarment { tshirt, shirt, jacket };
enum class LowerGarment { pants, shorts, skirt };
enum class Footwear { shoes, boots };
enum class Bag { backpack, handbag, shoulder_bag };

struct PersonTraits {
    bool female = false;
    Headwear headwear = Headwear::hair;
    std::size_t hair_color = 0;
    std::size_t hat_color = 0;
    UpperGarment upper = UpperGarment::tshirt;
    std::size_t upper_color = 0;
    LowerGarment lower = LowerGarment::pants;
    std::size_t lower_color = 0;
    Footwear footwear = Footwear::shoes;
    std::size_t footwear_color = 0;
    Bag bag = Bag::backpack;
    std::size_t bag_color = 0;
};

PersonTraits sample_traits(std::uint64_t seed);
/// Attribute text in schema slot order (gender, head, upper, lower, footwear, belongings).
AttributeSet describe(const PersonTraits& traits, const SlotSchema& schema = {});

inline constexpr std::int64_t kSynthHeight = 64;
inline constexpr std::int64_t kSynthWidth = 32;

/// [3, height, width] image; view_seed controls pose jitter, lighting and noise.
Tensor render_person(const PersonTraits& traits, std::uint64_t view_seed, std::int64_t height = kSynthHeight,
                     std::int64_t width = kSynthWidth);

std::string synthetic_uri(std::uint64_t traits_seed, std::uint64_t view_seed, std::int64_t height = kSynthHeight,
                          std::int64_t width = kSynthWidth);
/// Parses "synthetic:<H>x<W>/<traits seed>/<view seed>" and renders it.
Tensor render_synthetic_uri(std::string_view uri);

/// Seed derivation shared by every seeded routine in the project.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

std::vector<PromptTemplate> default_template_library(CaptionStyle style);

struct SynthOptions {
    std::int64_t height = kSynthHeight;
    std::int64_t width = kSynthWidth;
    SlotSchema schema;
};

/// n_identities * imgs_per_id records, identity-major order, three captions each.
std::vector<PersonRecord> synth_manifest(std::int64_t n_identities, std::int64_t imgs_per_id, std::uint64_t rng_seed,
                                         const SynthOptions& options = {});

}  // namespace plip::data
