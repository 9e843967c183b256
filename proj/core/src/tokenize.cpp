#include "evolver/tokenize.hpp"

#include <cctype>
#include <cmath>

namespace evolver {

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (std::isalnum(c) || c == '_') {
            size_t j = i + 1;
            while (j < n) {
                unsigned char d = static_cast<unsigned char>(text[j]);
                if (!std::isalnum(d) && d != '_') break;
                ++j;
            }
            tokens.push_back({std::string(text.substr(i, j - i)), i, j});
            i = j;
        } else {
            tokens.push_back({std::string(text.substr(i, 1)), i, i + 1});
            ++i;
        }
    }
    return tokens;
}

size_t count_tokens(std::string_view text) {
    return tokenize(text).size();
}

uint64_t fnv1a(std::string_view bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<double> embed_text(std::string_view text, int dim) {
    std::vector<double> v(static_cast<size_t>(dim), 0.0);
    bool any = false;
    for (const Token& tok : tokenize(text)) {
        std::string folded = tok.text;
        for (char& c : folded) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        uint64_t h = fnv1a(folded);
        size_t idx = static_cast<size_t>(h % static_cast<uint64_t>(dim));
        double sign = ((h >> 32) & 1ULL) ? 1.0 : -1.0;
        v[idx] += sign;
        any = true;
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (!any || norm2 == 0.0) {
        // all-cancelled or empty input: canonical unit vector
        std::fill(v.begin(), v.end(), 0.0);
        v[0] = 1.0;
        return v;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    for (double x : a) na += x * x;
    for (double x : b) nb += x * x;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace evolver
