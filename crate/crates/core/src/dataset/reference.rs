//! Published per-class image counts of the aggregated 26-class dataset.
//!
//! These are documented targets for a full-scale rebuild; the exact counts
//! depend on the relevance review and hashing used by the original authors.

/// Final image count per class, indexed by `ClassRegistry::skin26()` code.
pub const SKIN26_FINAL_COUNTS: [usize; 26] = [
    858,  // Acne and Rosacea
    239,  // Dermatofibroma
    1210, // Atopic Dermatitis
    4709, // Basal Cell Carcinoma
    2065, // Benign Keratosis-like Lesions
    528,  // Bullous Disease
    352,  // Cellulitis Impetigo
    1791, // Psoriasis / Lichen Planus
    1553, // Eczema
    467,  // Exanthems and Drug Eruptions
    282,  // Hair Loss
    676,  // Light Diseases
    511,  // Lupus
    7967, // Melanocytic Nevi
    3698, // Melanoma
    1163, // Nail Fungus
    308,  // Poison Ivy
    479,  // Scabies Lyme
    1802, // Seborrheic Keratoses
    698,  // Systemic Disease
    1546, // Tinea Ringworm
    261,  // Urticaria Hives
    845,  // Vascular Tumors
    510,  // Vasculitis
    1849, // Warts Molluscum
    628,  // Squamous cell carcinoma
];

pub const SKIN26_TOTAL_IMAGES: usize = 36_995;

/// Image count of the first (ten-class) source dataset.
pub const FIRST_SOURCE_IMAGES: usize = 27_153;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_counts_sum_to_total() {
        assert_eq!(SKIN26_FINAL_COUNTS.iter().sum::<usize>(), SKIN26_TOTAL_IMAGES);
    }
}
