#include "griddiff/vocab.hpp"
#include "griddiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace griddiff {

namespace {

const char* kind_name(TokenKind k) {
    switch (k) {
        case TokenKind::word: return "word";
        case TokenKind::coord: return "coord";
        case TokenKind::class_name: return "class";
        case TokenKind::special: return "special";
    }
    return "?";
}

TokenKind kind_from_name(const std::string& s) {
    if (s == "word") return TokenKind::word;
    if (s == "coord") return TokenKind::coord;
    if (s == "class") return TokenKind::class_name;
    if (s == "special") return TokenKind::special;
    throw std::runtime_error("vocabulary: unknown token kind '" + s + "'");
}

} // namespace

void Vocabulary::add(TokenKind kind, const std::string& surface) {
    if (index_.count(surface)) {
        throw std::runtime_error("duplicate: " + surface);
    }
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back({id, kind, surface});
    index_[surface] = id;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& class_names,
                             const std::vector<std::string>& word_list,
                             int coord_bins) {
    if (class_names.empty() || word_list.empty()) {
        throw std::runtime_error("vocabulary: class and word lists must be non-empty");
    }
    if (coord_bins < 2) {
        throw std::runtime_error("vocabulary: coord_bins must be >= 2");
    }
    Vocabulary v;
    v.coord_bins_ = coord_bins;
    v.class_names_ = class_names;
    v.add(TokenKind::special, "[PAD]");
    v.add(TokenKind::special, "[M]");
    v.add(TokenKind::special, "[BOS]");
    for (const auto& w : word_list) {
        v.add(TokenKind::word, w);
    }
    v.coord_base_ = static_cast<int>(v.tokens_.size());
    for (int b = 0; b < coord_bins; ++b) {
        v.add(TokenKind::coord, "<" + std::to_string(b) + ">");
    }
    v.class_base_ = static_cast<int>(v.tokens_.size());
    for (const auto& c : class_names) {
        v.add(TokenKind::class_name, c);
    }
    return v;
}

const Token& Vocabulary::token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size())) {
        throw std::runtime_error("vocabulary: id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::lookup(const std::string& surface) const {
    auto it = index_.find(surface);
    if (it == index_.end()) {
        throw std::runtime_error("out of vocabulary: " + surface);
    }
    return it->second;
}

int Vocabulary::coord_token(int bin) const {
    if (bin < 0 || bin >= coord_bins_) {
        throw std::runtime_error("coord bin out of range: " + std::to_string(bin));
    }
    return coord_base_ + bin;
}

int Vocabulary::class_token(int class_id) const {
    if (class_id < 0 || class_id >= static_cast<int>(class_names_.size())) {
        throw std::runtime_error("class id out of range: " + std::to_string(class_id));
    }
    return class_base_ + class_id;
}

int Vocabulary::coord_bin(int id) const {
    if (!is_coord(id)) {
        throw std::runtime_error("token " + std::to_string(id) + " is not a coord token");
    }
    return id - coord_base_;
}

int Vocabulary::class_of(int id) const {
    if (!is_class(id)) {
        throw std::runtime_error("token " + std::to_string(id) + " is not a class token");
    }
    return id - class_base_;
}

std::vector<int> Vocabulary::encode_text(const std::string& phrase) const {
    std::vector<int> out;
    if (phrase.empty()) {
        return out;
    }
    std::istringstream ss(phrase);
    std::string w;
    while (std::getline(ss, w, ' ')) {
        out.push_back(lookup(w));
    }
    return out;
}

std::vector<int> Vocabulary::encode_box(const Box& b) const {
    if (!b.valid()) {
        throw std::runtime_error("box outside [0,1] or inverted");
    }
    const int B = coord_bins_;
    auto bin = [&](double c) {
        return std::min(static_cast<int>(std::floor(c * B)), B - 1);
    };
    return {coord_token(bin(b.x1)), coord_token(bin(b.y1)),
            coord_token(bin(b.x2)), coord_token(bin(b.y2))};
}

Box Vocabulary::decode_box(const std::vector<int>& ids) const {
    if (ids.size() != 4) {
        throw std::runtime_error("decode_box expects 4 coord tokens");
    }
    double c[4];
    for (int i = 0; i < 4; ++i) {
        c[i] = (coord_bin(ids[static_cast<size_t>(i)]) + 0.5) / coord_bins_;
    }
    Box b{c[0], c[1], c[2], c[3]};
    // the diffusion decoder may commit corners in either order
    if (b.x1 > b.x2) {
        std::swap(b.x1, b.x2);
    }
    if (b.y1 > b.y2) {
        std::swap(b.y1, b.y2);
    }
    return b;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) {
            s += ' ';
        }
        s += token(ids[i]).surface;
    }
    return s;
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += std::to_string(t.id);
        out += '\t';
        out += kind_name(t.kind);
        out += '\t';
        out += t.surface;
        out += '\n';
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write vocabulary: " + path);
    }
    f << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot read vocabulary: " + path);
    }
    Vocabulary v;
    std::string line;
    int expect = 0;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        size_t t1 = line.find('\t');
        size_t t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw std::runtime_error("vocabulary: malformed line: " + line);
        }
        int id = std::stoi(line.substr(0, t1));
        if (id != expect++) {
            throw std::runtime_error("vocabulary: ids not dense at " + std::to_string(id));
        }
        TokenKind kind = kind_from_name(line.substr(t1 + 1, t2 - t1 - 1));
        std::string surface = line.substr(t2 + 1);
        if (kind == TokenKind::coord) {
            if (v.coord_base_ == 0 && v.coord_bins_ == 0) {
                v.coord_base_ = id;
            }
            ++v.coord_bins_;
        }
        if (kind == TokenKind::class_name) {
            if (v.class_names_.empty()) {
                v.class_base_ = id;
            }
            v.class_names_.push_back(surface);
        }
        v.add(kind, surface);
    }
    if (v.tokens_.size() < 3 || v.tokens_[0].surface != "[PAD]" ||
        v.tokens_[1].surface != "[M]" || v.tokens_[2].surface != "[BOS]") {
        throw std::runtime_error("vocabulary: specials [PAD],[M],[BOS] must occupy ids 0,1,2");
    }
    if (v.coord_bins_ < 2) {
        throw std::runtime_error("vocabulary: missing coord tokens");
    }
    return v;
}

uint64_t Vocabulary::hash() const {
    std::string s = serialize();
    return fnv1a(s.data(), s.size());
}

} // namespace griddiff
