use crate::clock::Clock;
use crate::taxonomy::{Taxonomy, TaxonomyBuilder};

pub(crate) const LEGAL_INTENTION: &str = "Legal Argument Strengthening";

pub(crate) const LEGAL_EMAIL: [(&str, [(&str, &str); 2]); 4] = [
    (
        "Adding supporting legal precedents to reinforce an argument.",
        [
            (
                "The case we are handling has similarities with other cases.",
                "The case we are handling is similar to Smith v. Jones, where the court held a comparable view on contractual obligations.",
            ),
            (
                "Our argument in this lawsuit is strong.",
                "Our argument, bolstered by the precedent set in Brown v. Board of Education, is particularly strong in advocating for equal rights.",
            ),
        ],
    ),
    (
        "Integrating additional factual evidence to solidify a legal stance.",
        [
            (
                "Our client's position in this matter is legally sound.",
                "Our client's position is legally sound, supported by the financial records and witness statements provided.",
            ),
            (
                "This case is straightforward.",
                "This case is straightforward, as evidenced by the detailed timeline of events and corroborating emails.",
            ),
        ],
    ),
    (
        "Enhancing the persuasiveness of the argument by refining logical reasoning.",
        [
            (
                "We believe our client is not liable.",
                "Our client is not liable, as logically, the responsibility falls on the contractor, given the terms of the agreement.",
            ),
            (
                "This case should be dismissed.",
                "This case should be dismissed, considering the lack of causation between our client's actions and the alleged damages",
            ),
        ],
    ),
    (
        "Incorporating expert testimony to bolster legal claims.",
        [
            (
                "Our stance on the patent infringement is valid.",
                "Our stance is strengthened by the expert testimony of Dr. Smith, a renowned patent specialist.",
            ),
            (
                "The damages claimed are excessive.",
                "The damages claimed are excessive, as per the assessment of leading industry expert John Doe.",
            ),
        ],
    ),
];

pub(crate) fn legal_email() -> Taxonomy {
    let mut b = TaxonomyBuilder::new("tax-legal", "legal", "email", Clock::fixed_default().now());
    let i = b.intention(LEGAL_INTENTION, "Strengthening arguments is central to legal correspondence.");
    for (desc, examples) in LEGAL_EMAIL {
        let d = b.description(&i, desc, "A common way legal writers reinforce a position.");
        for (orig, rev) in examples {
            b.example(&d, orig, rev, "Shows the revision applied to a typical sentence.");
        }
    }
    b.build()
}
