#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "ptqlab/model.hpp"
#include "ptqlab/pipeline.hpp"
#include "ptqlab/quant.hpp"
#include "ptqlab/rng.hpp"
#include "ptqlab/stats.hpp"

using namespace ptqlab;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
    CounterRng rng(seed);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.next_normal();
    return m;
}

} // namespace

TEST_CASE("quantized tensor container: manifest layout and byte round-trip") {
    QuantizedTensor q = rtn_quantize(gaussian(4, 8, 1), QuantConfig{4, 4, Scheme::asymmetric});
    auto bytes = serialize_quantized_tensor(q);

    // The manifest is plain key=value text terminated by a blank line.
    std::string head(bytes.begin(), bytes.begin() + 64);
    CHECK(head.rfind("version=1\nbits=4\ngroup_size=4\nscheme=asymmetric\nrows=4\ncols=8\n\n",
                     0) == 0);

    QuantizedTensor back = parse_quantized_tensor(bytes);
    CHECK(back == q);
    CHECK(serialize_quantized_tensor(back) == bytes);

    std::string path = "roundtrip.qt";
    save_quantized_tensor(path, q);
    CHECK(load_quantized_tensor(path) == q);
    std::remove(path.c_str());
}

TEST_CASE("quantized tensor container: per-tensor group size key") {
    QuantizedTensor q = rtn_quantize(gaussian(2, 4, 2),
                                     QuantConfig{3, QuantConfig::kPerTensor, Scheme::symmetric});
    auto bytes = serialize_quantized_tensor(q);
    std::string text(bytes.begin(), bytes.begin() + 48);
    CHECK(text.find("group_size=per-tensor\n") != std::string::npos);
    CHECK(parse_quantized_tensor(bytes) == q);
}

TEST_CASE("quantized tensor container: truncation and bad keys are parse errors") {
    QuantizedTensor q = rtn_quantize(gaussian(2, 4, 3), QuantConfig{4, 2, Scheme::asymmetric});
    auto bytes = serialize_quantized_tensor(q);
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 2);
    CHECK_THROWS_AS(parse_quantized_tensor(cut), ParseError);

    std::string garbage = "version=1\nwat=1\n\n";
    CHECK_THROWS_AS(
        parse_quantized_tensor(std::vector<std::uint8_t>(garbage.begin(), garbage.end())),
        ParseError);
}

TEST_CASE("ftm manifest text is canonical") {
    ModelSpec m = generate_model(2, 3, 4, Nonlinearity::relu, false, true);
    std::string manifest = serialize_model_manifest(m);
    CHECK(manifest ==
          "ftm v1\n"
          "layers 2\n"
          "layer name=fc0 d_in=3 d_out=3 nonlinearity=relu residual=0 has_bias=1\n"
          "layer name=fc1 d_in=3 d_out=3 nonlinearity=relu residual=0 has_bias=1\n");
}

TEST_CASE("corpus line records survive adversarial text") {
    AssembledSample s{"id", "text with é accents, \"quotes\", {braces} and \n breaks",
                      "tmpl"};
    std::string line = serialize_assembled(s);
    AssembledSample back = parse_assembled(line);
    CHECK(back.text == s.text);
    CHECK(serialize_assembled(back) == line);
}

TEST_CASE("stats histogram csv columns sum to the element count") {
    Matrix a = gaussian(3, 30, 5);
    ActivationStats s = capture_stats(a, 3.0);
    std::uint64_t sum = 0;
    for (auto c : s.histogram.counts) sum += c;
    CHECK(sum == 90);
    CHECK(s.total_count == 90);
}

TEST_CASE("objective report value survives 17-digit round-trip") {
    double v = 0.1234567890123456789;
    ObjectiveReport r{0, "gptq-eq1", ReferenceSide::same_a, v};
    CHECK(parse_report(serialize_report(r)).value == v);

    ObjectiveReport tiny{1, "rtn", ReferenceSide::same_a, 4.9406564584124654e-324};
    CHECK(parse_report(serialize_report(tiny)).value == tiny.value);
}
