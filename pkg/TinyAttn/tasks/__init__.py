# tasks package
