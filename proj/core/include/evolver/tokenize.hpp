#ifndef EVOLVER_TOKENIZE_HPP
#define EVOLVER_TOKENIZE_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace evolver {

// A token with its byte range in the source text, so offsets round-trip:
// text.substr(begin, end - begin) == token text.
struct Token {
    std::string text;
    size_t begin = 0;
    size_t end = 0;
};

// Whitespace-and-punctuation split: maximal alphanumeric/underscore runs are
// tokens, every other non-space byte is a single-character token.
std::vector<Token> tokenize(std::string_view text);

size_t count_tokens(std::string_view text);

// FNV-1a 64-bit; stable across platforms and process restarts.
uint64_t fnv1a(std::string_view bytes);

// splitmix64 step; used to derive independent deterministic seed streams.
uint64_t splitmix64(uint64_t x);

// Hashed bag-of-tokens embedding, case-folded, signed, projected to `dim`
// and L2-normalized. Empty or tokenless text maps to the canonical first
// basis vector.
std::vector<double> embed_text(std::string_view text, int dim = 64);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace evolver

#endif  // EVOLVER_TOKENIZE_HPP
