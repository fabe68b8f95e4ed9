//! Coefficient expressions: parsing, evaluation and numerical validation of the
//! ellipticity and boundedness assumptions.

mod field;
mod parser;

pub use field::{
    check_assumptions, eval_field, AssumptionError, AssumptionReport, CoeffValues,
    CoefficientField, Coefficients, EvalError, FieldError, OperatorSpec, SpecError, ValidationBox,
};
pub use parser::{parse_expr, BinOp, EvalErrorKind, Expr, Func, ParseError, ParseErrorKind};
