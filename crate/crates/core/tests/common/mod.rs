//! Fixtures shared by the integration suites.

use modeltuner_core::prompt::WorkedExample;

pub const DOMAIN_TEXT: &str = "A clinic treats patients. Each patient has a medical record. \
A medical record contains laboratory results and consent forms. Each laboratory result \
belongs to exactly one medical record.";

pub const EXAMPLE_1_DESCRIPTION: &str = "A library lends books to members.";
pub const EXAMPLE_1_STEPS: &str = "Identify the entities Library, Book and Member.\n\
Add the title attribute to Book.\n\
Connect Library to Book with a lends relationship.";
pub const EXAMPLE_1_MODEL: &str = "<ecore:EPackage name=\"library\">\n  \
<eClassifiers xsi:type=\"ecore:EClass\" name=\"Book\"/>\n</ecore:EPackage>";

pub const EXAMPLE_2_DESCRIPTION: &str = "An online shop sells products to customers.";
pub const EXAMPLE_2_STEPS: &str = "Identify the entities Shop, Product and Customer.\n\
Add the price attribute to Product.\n\
Connect Shop to Product with a sells relationship.";
pub const EXAMPLE_2_MODEL: &str = "<ecore:EPackage name=\"shop\">\n  \
<eClassifiers xsi:type=\"ecore:EClass\" name=\"Product\"/>\n</ecore:EPackage>";

pub fn worked_examples() -> Vec<WorkedExample> {
    vec![
        WorkedExample {
            description: Some(EXAMPLE_1_DESCRIPTION.to_string()),
            steps: Some(EXAMPLE_1_STEPS.to_string()),
            model_text: EXAMPLE_1_MODEL.to_string(),
        },
        WorkedExample {
            description: Some(EXAMPLE_2_DESCRIPTION.to_string()),
            steps: Some(EXAMPLE_2_STEPS.to_string()),
            model_text: EXAMPLE_2_MODEL.to_string(),
        },
    ]
}
