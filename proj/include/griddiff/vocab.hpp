#pragma once
// Closed token grammar shared by every task: ordinary words, quantized
// coordinate tokens, object-class tokens and the specials [PAD]/[M]/[BOS].

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace griddiff {

enum class TokenKind : uint8_t { word, coord, class_name, special };

struct Token {
    int id;
    TokenKind kind;
    std::string surface;
};

/// Axis-aligned box, normalized to the scene extent.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double area() const { return (x2 - x1) * (y2 - y1); }
    bool valid() const {
        return x1 >= 0 && y1 >= 0 && x2 <= 1 && y2 <= 1 && x1 <= x2 && y1 <= y2;
    }
};

class Vocabulary {
  public:
    // Specials occupy the lowest ids in fixed order, so the mask id is stable
    // across vocabularies.
    static constexpr int kPad = 0;
    static constexpr int kMask = 1;
    static constexpr int kBos = 2;

    static Vocabulary build(const std::vector<std::string>& class_names,
                            const std::vector<std::string>& word_list,
                            int coord_bins = 100);

    size_t size() const { return tokens_.size(); }
    int coord_bins() const { return coord_bins_; }
    const std::vector<std::string>& class_names() const { return class_names_; }

    const Token& token(int id) const;
    /// Exact surface lookup; throws naming the missing surface.
    int lookup(const std::string& surface) const;
    bool contains(const std::string& surface) const { return index_.count(surface) != 0; }

    int coord_token(int bin) const;
    int class_token(int class_id) const;
    bool is_coord(int id) const { return id >= coord_base_ && id < coord_base_ + coord_bins_; }
    bool is_class(int id) const { return id >= class_base_ && id < class_base_ + static_cast<int>(class_names_.size()); }
    bool is_special(int id) const { return id < 3; }
    int coord_bin(int id) const; // throws on non-coord id
    int class_of(int id) const;  // throws on non-class id

    std::vector<int> encode_text(const std::string& phrase) const;
    std::vector<int> encode_box(const Box& b) const;
    Box decode_box(const std::vector<int>& ids) const;
    /// Surfaces of the given ids joined with spaces; [PAD] tokens are kept.
    std::string detokenize(const std::vector<int>& ids) const;

    // One token per line: "<id>\t<kind>\t<surface>".
    std::string serialize() const;
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    uint64_t hash() const;

  private:
    void add(TokenKind kind, const std::string& surface);

    std::vector<Token> tokens_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> class_names_;
    int coord_bins_ = 0;
    int coord_base_ = 0;
    int class_base_ = 0;
};

} // namespace griddiff
