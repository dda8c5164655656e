#include <catch2/catch_amalgamated.hpp>

#include "muse/backends.hpp"
#include "muse/config.hpp"

using namespace muse;
using backends::MockSuite;

namespace {

Image stripes8() {
    Image img(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) img.at(y, x, 0) = (x % 2 == 0) ? 1.0 : 0.0;
    return img;
}

Image split8() {
    Image img(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) img.at(y, x, 0) = (y < 4) ? 1.0 : 0.25;
    return img;
}

}  // namespace

TEST_CASE("mock embed_image is deterministic and self-similar", "[backends]") {
    MockSuite mock(0, 768);
    const Image img = stripes8();
    const auto e1 = mock.embed_image(img);
    const auto e2 = mock.embed_image(img);
    REQUIRE(e1.values == e2.values);  // bit-identical
    REQUIRE(e1.dim() == 768);

    // all-zero image maps to the fixed projection of the zero feature
    const Image zero(8, 8, 1);
    const auto ez = mock.embed_image(zero);
    REQUIRE_THAT(backends::cosine(ez.values, ez.values), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("mock separates structurally different images (frozen regression)", "[backends]") {
    MockSuite mock(0, 768);
    const Real cos_ab = backends::cosine(mock.embed_image(stripes8()).values, mock.embed_image(split8()).values);
    REQUIRE(cos_ab < 1.0);
    REQUIRE_THAT(cos_ab, Catch::Matchers::WithinAbs(0.62653347351697408, 1e-12));
}

TEST_CASE("similarity is a cosine in the shared projection space", "[backends]") {
    MockSuite mock(0, 768);
    const Image img = stripes8();
    const Real s = mock.similarity("painting", img).value;
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(
                        backends::cosine(mock.embed_text("painting").values, mock.embed_image(img).values), 0.0));
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(0.046054471491344853, 1e-12));

    // cosine primitives: identical projections give 1, orthogonal give 0
    REQUIRE_THAT(backends::cosine({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(backends::cosine({1.0, 0.0}, {0.0, 5.0}), Catch::Matchers::WithinAbs(0.0, 1e-12));

    REQUIRE_THROWS_AS(mock.similarity("", img), error);
}

TEST_CASE("embed rejects malformed images", "[backends]") {
    MockSuite mock(0, 16);
    Image bad;
    REQUIRE_THROWS_AS(mock.embed_image(bad), shape_error);
    Image two_channel(4, 4, 3);
    two_channel.c = 2;  // inconsistent with storage
    REQUIRE_THROWS_AS(mock.embed_image(two_channel), shape_error);
}

TEST_CASE("mock caption is deterministic, lowercase and keyword-bearing", "[backends]") {
    MockSuite mock(0, 768);
    const Image img = stripes8();
    const std::string c1 = mock.caption(img);
    const std::string c2 = mock.caption(img);
    REQUIRE(c1 == c2);
    REQUIRE(c1 == "a strange drawing of a street");
    for (char ch : c1) REQUIRE_FALSE(std::isupper(static_cast<unsigned char>(ch)));

    // configurable word list forces the keyword
    MockSuite forced(3, 32, {"painting"});
    for (int i = 0; i < 8; ++i) {
        Image img2(8, 8, 1);
        img2.at(i % 8, 0, 0) = 1.0;
        REQUIRE(forced.caption(img2).find("painting") != std::string::npos);
    }
}

TEST_CASE("mock scorers are deterministic functions of the embedding", "[backends]") {
    MockSuite mock(0, 768);
    const Image img = stripes8();
    const Real a1 = mock.aesthetic_score(img);
    REQUIRE(a1 == mock.aesthetic_score(img));
    REQUIRE_THAT(a1, Catch::Matchers::WithinAbs(5.4205328925932541, 1e-12));
    REQUIRE(a1 > 1.0);
    REQUIRE(a1 < 10.0);

    const Real ir = mock.image_reward_score("painting", img);
    REQUIRE_THAT(ir, Catch::Matchers::WithinAbs(0.092108942982689707, 1e-12));
    REQUIRE_THAT(ir, Catch::Matchers::WithinAbs(2.0 * mock.similarity("painting", img).value, 1e-15));
}

TEST_CASE("deterministic backends repeat bit-identically across roles", "[backends]") {
    MockSuite mock(9, 64);
    REQUIRE(mock.descriptor().deterministic);
    const Image img = split8();
    REQUIRE(mock.embed_image(img).values == mock.embed_image(img).values);
    REQUIRE(mock.embed_style(img).values == mock.embed_style(img).values);
    REQUIRE(mock.embed_text("art").values == mock.embed_text("art").values);
    REQUIRE(mock.similarity("art", img).value == mock.similarity("art", img).value);
    REQUIRE(mock.caption(img) == mock.caption(img));
    REQUIRE(mock.aesthetic_score(img) == mock.aesthetic_score(img));
    REQUIRE(mock.image_reward_score("art", img) == mock.image_reward_score("art", img));

    // content and style channels are distinct projections
    REQUIRE(mock.embed_content(img).values != mock.embed_style(img).values);
}

TEST_CASE("backend selection honors config keys and reports unavailability", "[backends]") {
    Config cfg = Config::parse_string(
        "[backend]\n"
        "embed_dim = 16\n"
        "similarity = \"mock:7\"\n"
        "embedder = \"mock:7\"\n"
        "captioner = \"mock:7\"\n"
        "aesthetic = \"mock:7\"\n"
        "image_reward = \"mock:7\"\n");
    auto suite = backends::make_suite(cfg);
    REQUIRE(suite.embedder->embed_image(stripes8()).dim() == 16);
    REQUIRE(suite.similarity->descriptor().name == "mock:7");

    Config real = Config::parse_string("backend.similarity = \"openai/clip-vit-large-patch14\"\n");
    REQUIRE_THROWS_AS(backends::make_suite(real), backend_unavailable);

    Config bad = Config::parse_string("backend.similarity = \"mock:notanumber\"\n");
    REQUIRE_THROWS_AS(backends::make_suite(bad), config_error);
}
