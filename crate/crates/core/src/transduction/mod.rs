pub mod iam; pub mod psm;
